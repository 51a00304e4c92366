"""CSV and key=value report writers shared by the CLI modes."""
import csv
import logging
import os
from datetime import datetime

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = ('time', 'norm_h', 'norm_grad', 'norm_lr1', 'norm_rate', 'norm_lap',
                  'int_grad2', 'int_h2', 'int_lr1', 'int_rate2', 'int_lap2', 'int_weighted')
VERDICT_COLUMNS = ('lemma_id', 'equation', 'regime', 'lhs', 'rhs', 'slack', 'pass', 'time', 'note')
ITERATION_COLUMNS = ('iter', 'residual', 'f_norm', 'scaled')
TIMING_COLUMNS = ('iter', 'forward_wall_time')
STABILITY_DATA_COLUMNS = ('data_bracket', 'data_linear_sum', 'valid')


def _number(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, float)):
        return repr(float(value)) if isinstance(value, float) else str(value)
    try:
        return repr(float(value))
    except (TypeError, ValueError):
        return str(value)


def write_csv(path, header, rows):
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_number(value) for value in row])


def write_key_values(path, pairs):
    with open(path, 'w', encoding='utf-8') as handle:
        for key, value in pairs:
            handle.write(f"{key}={_number(value)}\n")


def write_ledger(path, ledger):
    write_csv(path, LEDGER_COLUMNS, ledger.rows())


def write_verdicts(path, verdicts):
    rows = ([v.lemma_id, v.equation, v.regime, v.lhs, v.rhs, v.slack, v.verdict, v.time, v.note]
            for v in verdicts)
    write_csv(path, VERDICT_COLUMNS, rows)


def write_iterations(directory, history):
    """Residual history; wall times go to timings.dat, outside the reproducible CSVs."""
    write_csv(os.path.join(directory, 'iterations.csv'), ITERATION_COLUMNS,
              ([record.iteration, record.residual, record.f_norm, record.scaled] for record in history))
    with open(os.path.join(directory, 'timings.dat'), 'w', encoding='utf-8') as handle:
        handle.write("# " + " ".join(TIMING_COLUMNS) + "\n")
        for record in history:
            handle.write(f"{record.iteration} {record.wall_time:.6f}\n")


def write_stability(directory, table):
    """Table CSV, fit summary and one two-column data file per error norm."""
    from cbf.stability import ERROR_COLUMNS

    rows = ([row.delta] + [row.errors[column] for column in ERROR_COLUMNS]
            + [row.data.holder_bracket(table.r), row.data.linear_sum(), row.valid]
            for row in table.rows)
    write_csv(os.path.join(directory, 'stability.csv'), ('delta',) + ERROR_COLUMNS + STABILITY_DATA_COLUMNS, rows)

    pairs = [('target', table.target), ('r', table.r), ('expected_exponent', 2.0 / (table.r + 1))]
    for column, fit in table.fits.items():
        pairs.append((f"{column}.exponent", 'undefined' if fit.exponent is None else fit.exponent))
        pairs.append((f"{column}.r_squared", 'undefined' if fit.r_squared is None else fit.r_squared))
        pairs.append((f"{column}.rows_used", fit.rows_used))
        if fit.reason:
            pairs.append((f"{column}.reason", fit.reason))
    write_key_values(os.path.join(directory, 'fit_summary.txt'), pairs)

    for column in ERROR_COLUMNS:
        with open(os.path.join(directory, f"{column}.dat"), 'w', encoding='utf-8') as handle:
            handle.write(f"# delta {column}\n")
            for row in table.rows:
                if row.valid:
                    handle.write(f"{row.delta!r} {row.errors[column]!r}\n")


def write_provenance(directory, config, mode, extra=()):
    """Resolved configuration echoed next to the results."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, 'provenance.txt'), 'w', encoding='utf-8') as handle:
        handle.write(f"# {mode} run, {datetime.now().isoformat(timespec='seconds')}\n")
        handle.write(f"# source: {config.source}\n")
        for line in config.resolved_lines():
            handle.write(line + "\n")
        for key, value in extra:
            handle.write(f"{key} = {value}\n")
