#!/usr/bin/env python
"""Run the CBF solver command line."""

from cbf.main import main

if __name__ == "__main__":
    raise SystemExit(main())
