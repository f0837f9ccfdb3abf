"""QTC streams of the closed-form motion primitives.

For each primitive, prints the symbols of its first agent pair before and
after the crossing instant, then compares them with the symbols computed from
the generated tracks.
"""
import numpy as np

from masi.qtc import QtcVector, Variant, pair_series
from masi.synth import CLOSED_FORM, ScenarioSpec, analytic_qtc, generate_scenario


def main():
    scene = generate_scenario(ScenarioSpec(n_agents=0, primitives=CLOSED_FORM, duration=300,
                                           arena=(0.0, 0.0, 12.0, 40.0)))
    for inst in scene.primitives:
        (a, b), streams = next(iter(analytic_qtc(inst, Variant.C2).items()))
        s = streams[0]
        first, last = QtcVector(tuple(s.codes[0])), QtcVector(tuple(s.codes[-1]))
        ra = scene.agents.get(a) or scene.agents[f"{a}#0"]
        hb = scene.agents.get(b) or scene.agents[f"{b}#0"]
        ones = np.ones(len(s.frames), bool)
        got = pair_series(ra.positions, hb.positions, ones, ones, scene.rate, Variant.C2, degenerate="zero")
        agree = (got[s.reliable] == s.codes[s.reliable]).all()
        print(f"{inst.kind:<14} {a} -> {b}: start {first}  end {last}  computed matches: {agree}")


if __name__ == "__main__":
    main()
