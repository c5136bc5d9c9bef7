"""
Runner classes, one per command line sub-command.
"""

import os
from typing import Optional

import censalign.config as cfg
from censalign.schemas import GeneratorSpec, LinkSpec, SubLignConfig
from censalign.scripts.evaluation import Evaluation
from censalign.scripts.experiment import Experiment, load_experiment_config, run_censor_probe
from censalign.scripts.identification import Identification
from censalign.scripts.kmeans_loss import KMeansLossBaseline
from censalign.scripts.sublign import SubLignInference, SubLignModel, SubLignTrainer
from censalign.scripts.synthetic import SyntheticGenerator
from censalign.utils.data import validate
from censalign.utils.dataset_io import read_dataset
from censalign.utils.utils import BaseClass


class GenerateRunner:
    def __init__(self, family: str, out: str, missing_rate: float = 0.0, **spec_fields):
        self.spec = GeneratorSpec.from_cli(family, **spec_fields)
        self.out = out
        self.missing_rate = missing_rate

    def run(self) -> int:
        SyntheticGenerator(self.out).run(self.spec, self.missing_rate)
        return 0


class ValidateRunner:
    def __init__(self, data: str):
        self.data = data

    def run(self) -> int:
        violations = validate(read_dataset(self.data))
        for violation in violations:
            print(violation)
        print(f"{len(violations)} violations in {self.data}")
        return 1 if violations else 0


class TrainRunner:
    def __init__(self, data: str, out: str, config: Optional[str] = None, aligned: bool = True):
        self.data = data
        self.out = out
        self.config_path = config
        self.aligned = aligned

    def run(self) -> int:
        config = SubLignConfig()
        if self.config_path:
            config = SubLignConfig.from_dict(BaseClass().read_json(self.config_path))
        SubLignTrainer().run(read_dataset(self.data), config, self.out, aligned=self.aligned)
        return 0


class InferRunner:
    def __init__(self, model: str, data: str, k: int, out: str):
        self.model, self.data, self.k, self.out = model, data, k, out

    def run(self) -> int:
        SubLignInference().run(self.model, read_dataset(self.data), self.k, self.out)
        return 0


class IdentifyRunner:
    def __init__(self, data: str, link: str, degree: Optional[int], k: int, out: str):
        self.data = data
        self.link = LinkSpec.parse(link, degree)
        self.k = k
        self.out = out

    def run(self) -> int:
        Identification().run(read_dataset(self.data), self.link, self.k, self.out)
        return 0


class KMeansLossRunner:
    def __init__(self, data: str, k: int, out: str, seed: int = 0):
        self.data, self.k, self.out, self.seed = data, k, out, seed

    def run(self) -> int:
        KMeansLossBaseline().run(read_dataset(self.data), self.k, self.out, seed=self.seed)
        return 0


class EvaluateRunner:
    def __init__(self, fit: str, data: str, out: Optional[str] = None):
        self.fit, self.data, self.out = fit, data, out

    def run(self) -> int:
        scores = Evaluation().run(self.fit, read_dataset(self.data), self.out)
        print(f"ARI {scores.ari}  SWAPS {scores.swaps}  PEARSON {scores.pearson}")
        return 0


class ExperimentRunner:
    def __init__(self, config: str, out_dir: Optional[str] = None):
        self.config = load_experiment_config(config)
        self.out_dir = out_dir or cfg.RESULTS_DIR

    def run(self) -> int:
        report = Experiment(self.out_dir).run(self.config)
        print(report.text, end="")
        # nonzero only when a method never produced a result
        return 1 if report.failed_methods else 0


class CensorProbeRunner:
    def __init__(self, model: str, data: str, width: float, out: Optional[str] = None):
        self.model, self.data, self.width, self.out = model, data, width, out

    def run(self) -> int:
        io = BaseClass()
        model = SubLignModel.from_dict(io.read_json(self.model))
        result = run_censor_probe(model, read_dataset(self.data), self.width)
        print(
            f"fraction {result.fraction:.4f} over {result.n_compared} trajectories "
            f"({result.n_excluded} excluded)"
        )
        if self.out:
            io.write_json(result.to_dict(), os.path.abspath(self.out))
        return 0
