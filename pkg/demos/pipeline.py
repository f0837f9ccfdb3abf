"""Synthetic scene to evaluation report in one script.

Generates a small crowd, builds a QTC_C1 dataset, trains a small model for a
few epochs and prints the evaluation table next to the persistence baseline.
Runs in about a minute.
"""
from masi import evalharness as ev
from masi import model as mdl
from masi.cluster import ClusterConfig
from masi.dataset import make_dataset
from masi.reports import format_table
from masi.synth import ScenarioSpec, generate_scenario


def main():
    scene = generate_scenario(ScenarioSpec(n_agents=10, duration=1500, seed=4, noise_std=0.02,
                                           arena=(0.0, 0.0, 12.0, 12.0)))
    print(f"scene: {len(scene.agents)} agents, frames {scene.frame_range}")

    ds = make_dataset(scene, "qtc4", ClusterConfig(radius=1.2, t_history=10, t_future=24, stride=30))
    print(f"dataset: n*={ds.n_star}, train/val/test = {ds.sizes}")

    config = mdl.ModelConfig.for_dataset(ds, hidden=32, embed_dim=16, epochs=8)
    result = mdl.fit(ds, config, progress=lambda e, tr, va: print(f"epoch {e:2d}  train {tr:.3f}  val {va:.3f}"))

    print()
    print(format_table(ev.evaluate(ds, result.params, config)))


if __name__ == "__main__":
    main()
