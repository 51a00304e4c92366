"""Run registry for CBF solver runs."""
