"""Save a trained state, reload it, and show how inputs get routed without a task id."""
import argparse
import os
import tempfile

import numpy as np

from scdem.harness.checkpoint import load_checkpoint, save_checkpoint
from scdem.harness.config import default_config
from scdem.harness.experiment import run_experiment
from scdem.inference import class_il_predict, route, routing_scores


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    result = run_experiment(default_config().with_seed(args.seed))
    state, stream = result.state, result.stream
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "state.ckpt")
        save_checkpoint(state, path)
        back = load_checkpoint(path)
        print(f"checkpoint {os.path.getsize(path)} bytes, {len(back.experts)} experts")

    for t, task in enumerate(stream.tasks, start=1):
        x = task.test.inputs
        chosen = route(back, x)
        same = np.array_equal(class_il_predict(back, x), class_il_predict(state, x))
        top = routing_scores(back, x[:1])[0]
        print(f"task {t} {task.class_set}: routed to own expert {np.mean(chosen == t):.3f}, "
              f"reload identical {same}, scores of first input {np.round(top, 3).tolist()}")


if __name__ == "__main__":
    main()
