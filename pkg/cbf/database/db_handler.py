from datetime import datetime
from typing import List, Optional
import logging

from .models import IterationRecord, LemmaRecord, Run, StabilityRecord, get_session

logger = logging.getLogger(__name__)


class DBHandler:
    def __init__(self, url=None):
        self.session = get_session(url)

    def start_run(self, mode, output_dir, config_text='', seed=None) -> Optional[Run]:
        """Register a run in the 'running' state."""
        try:
            run = Run(mode=mode, output_dir=output_dir, config_text=config_text, seed=seed)
            self.session.add(run)
            self.session.commit()
            logger.info(f"Registered run {run.id} ({mode})")
            return run
        except Exception as e:
            logger.error(f"Error registering run: {e}", exc_info=True)
            self.session.rollback()
            return None

    def finish_run(self, run_id, exit_code, message=''):
        """Record the exit code and close the run."""
        try:
            run = self.session.get(Run, run_id)
            if run is None:
                logger.warning(f"No run found for id: {run_id}")
                return None
            run.exit_code = exit_code
            run.status = 'ok' if exit_code == 0 else 'failed'
            run.message = message
            run.finished_at = datetime.utcnow()
            self.session.commit()
            return run
        except Exception as e:
            logger.error(f"Error finishing run: {e}", exc_info=True)
            self.session.rollback()
            return None

    def add_verdicts(self, run_id, verdicts):
        try:
            for verdict in verdicts:
                self.session.add(LemmaRecord(
                    run_id=run_id, lemma_id=verdict.lemma_id, regime=verdict.regime,
                    lhs=_finite(verdict.lhs), rhs=_finite(verdict.rhs),
                    verdict=verdict.verdict, note=verdict.note,
                ))
            self.session.commit()
            return True
        except Exception as e:
            logger.error(f"Error storing verdicts: {e}", exc_info=True)
            self.session.rollback()
            return False

    def add_iterations(self, run_id, history):
        try:
            for record in history:
                self.session.add(IterationRecord(
                    run_id=run_id, iteration=record.iteration, residual=record.residual,
                    f_norm=record.f_norm, scaled=record.scaled, wall_time=record.wall_time,
                ))
            self.session.commit()
            return True
        except Exception as e:
            logger.error(f"Error storing iterations: {e}", exc_info=True)
            self.session.rollback()
            return False

    def add_stability_rows(self, run_id, table):
        try:
            for row in table.rows:
                self.session.add(StabilityRecord(
                    run_id=run_id, target=table.target, delta=row.delta,
                    f_error=_finite(row.errors.get('f_error')),
                    u_sup_error=_finite(row.errors.get('u_sup_error')), valid=row.valid,
                ))
            self.session.commit()
            return True
        except Exception as e:
            logger.error(f"Error storing stability rows: {e}", exc_info=True)
            self.session.rollback()
            return False

    def get_run(self, run_id) -> Optional[Run]:
        try:
            return self.session.get(Run, run_id)
        except Exception as e:
            logger.error(f"Error getting run: {e}", exc_info=True)
            self.session.rollback()
            return None

    def get_runs(self, mode=None) -> List[Run]:
        """Runs newest first, optionally for one mode."""
        try:
            query = self.session.query(Run)
            if mode:
                query = query.filter(Run.mode == mode)
            return query.order_by(Run.id.desc()).all()
        except Exception as e:
            logger.error(f"Error listing runs: {e}", exc_info=True)
            self.session.rollback()
            return []

    def get_verdicts(self, run_id) -> List[LemmaRecord]:
        try:
            return self.session.query(LemmaRecord).filter(LemmaRecord.run_id == run_id).all()
        except Exception as e:
            logger.error(f"Error getting verdicts: {e}", exc_info=True)
            self.session.rollback()
            return []

    def close(self):
        self.session.close()


def _finite(value):
    if value is None:
        return None
    value = float(value)
    return value if value == value and abs(value) != float('inf') else None
