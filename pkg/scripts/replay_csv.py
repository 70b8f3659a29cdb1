"""Deploy one detector on an in-process bridge, replay a CSV, compare with batch.

    python scripts/replay_csv.py samples.csv cpu sigma_limit window_size=10
"""

import filecmp
import json
import sys
import tempfile
from pathlib import Path

from adaas.bridge import InProcessBridge, Lifecycle
from adaas.cli import replay_spec
from adaas.dataio import SinkSpec, SourceSpec, read_csv_samples
from adaas.registry import Registry
from adaas.specs import DetectorSpec


def main():
    csv_path, kpi, analysis, *kv = sys.argv[1:]
    params = {k: json.loads(v) for k, v in (p.split("=", 1) for p in kv)}
    reg = Registry()
    n_total = sum(1 for _ in read_csv_samples(csv_path, kpi))
    with tempfile.TemporaryDirectory() as d:
        online, offline = str(Path(d, "online.jsonl")), str(Path(d, "offline.jsonl"))
        spec = DetectorSpec(kpi, analysis, reg.validate_params(analysis, params),
                            SourceSpec("csv", path=csv_path), SinkSpec("jsonl", path=online))
        bridge = InProcessBridge(reg)
        bridge.deploy(spec)
        snap = bridge.wait_until(spec.detector_id, lambda s: s.state is Lifecycle.FAILED
                                 or s.samples_processed + s.samples_rejected >= n_total, timeout=60)
        bridge.undeploy(spec.detector_id)
        print(f"online: {snap.state.value}, {snap.samples_processed} samples, {snap.anomalies_fired} anomalies")
        replay_spec(spec, reg, offline)
        same = filecmp.cmp(online, offline, shallow=False)
        print("byte-identical" if same else "outputs differ")


if __name__ == "__main__":
    main()
