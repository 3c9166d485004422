import json
import logging

import numpy as np


class CallbackHandler:
    def on_snapshot(self, kind, t, state):
        # Summaries only; full states go to the trajectory artifacts
        if isinstance(state, list):
            summary = {"curves": len(state), "vertices": [len(c) for c in state]}
        else:
            summary = {
                "n": int(state.grid.n),
                "max": float(np.max(state.values)),
                "min": float(np.min(state.values)),
            }
        logger = logging.getLogger("gcsf-lab")
        logger.info(f"snapshot: {json.dumps({'kind': kind, 't': t, **summary})}")

    def on_finish(self, kind, trajectory):
        logger = logging.getLogger("gcsf-lab")
        logger.info(
            f"finished: {json.dumps({'kind': kind, 'snapshots': len(trajectory)})}"
        )
