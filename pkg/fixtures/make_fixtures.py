"""Regenerate the JSON model fixtures (seeded, so output is stable)."""
import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent


def pairwise(edges, rng):
    return [{"clique": [a, b], "table": rng.uniform(0.2, 2.0, size=4).round(6).tolist()}
            for a, b in edges]


def main():
    rng = np.random.default_rng(20100423)
    cut = [l.split() for l in (HERE / "chain9_cut.txt").read_text().splitlines()
             if l.strip() and not l.startswith("#")]
    doc = {"graph": cut, "domains": 2, "potentials": pairwise(cut, rng)}
    (HERE / "chain9_cut_model.json").write_text(json.dumps(doc, indent=1) + "\n")

    full = [l.split() for l in (HERE / "chain9.txt").read_text().splitlines()
             if l.strip() and not l.startswith("#")]
    doc = {"graph": full, "domains": 2, "potentials": pairwise(full, rng)}
    (HERE / "chain9_model.json").write_text(json.dumps(doc, indent=1) + "\n")

    interior = [["1", "4"], ["4", "3"], ["3", "8"], ["8", "9"], ["9", "6"], ["6", "7"],
                ["7", "2"], ["2", "1"], ["2", "5"], ["5", "8"], ["4", "5"], ["5", "6"]]
    arcs = [["a", "1"], ["b", "3"], ["c", "7"], ["d", "9"]]
    doc = {
        "graph": interior,
        "domains": 2,
        "potentials": pairwise(interior, rng) + pairwise(arcs, rng),
        "boundary": {
            "nodes": ["a", "b", "c", "d"],
            "arcs": arcs,
            "priors": {b: rng.uniform(0.2, 1.0, size=2).round(6).tolist() for b in "abcd"},
        },
    }
    (HERE / "boundary_grid3.json").write_text(json.dumps(doc, indent=1) + "\n")

    doc = {"graph": [["1", "2"], ["2", "3"]], "domains": 2,
           "potentials": [{"clique": ["1", "2"], "table": [1, 1, 1, 1]},
                          {"clique": ["2", "3"], "table": [1, 1, 1, 1]}]}
    (HERE / "chain3_uniform.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
