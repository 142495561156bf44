import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from tordistill.harness import (
    CellSpec,
    ConfigValidationError,
    ExperimentConfig,
    create_experiment_config,
    emit_plot_data,
    emit_table,
    load_trial_reports,
    run_experiment,
)
from tordistill.logging_system import get_logger, set_log_level
from tordistill.models import load_network, save_network
from tordistill.stages import DatasetStage
from tordistill.training import evaluate, train_student, train_teacher
from tordistill.variants import VariantTag

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-c', '--config', default=None, type=str, metavar='FILE',
                        help='YAML experiment config (merged over the preset)')
    common.add_argument('--preset', default=None, choices=['default', 'table1', 'table0', 'smoke'],
                        help='named preset to start from')
    common.add_argument('--output-dir', default=None, type=str, metavar='DIR',
                        help='where trials/, tables/, plots/ and checkpoints/ are written')
    common.add_argument('--seed', default=None, type=int, help='master seed')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    parser = argparse.ArgumentParser(description='Teacher-outlier-rejection distillation for noisy regression')
    sub = parser.add_subparsers(dest='command', required=True)

    teacher = sub.add_parser('train-teacher', parents=[common], help='train one teacher and write its checkpoint')
    teacher.add_argument('--noise-std', type=float, default=3.0)
    teacher.add_argument('--trial', type=int, default=0)

    student = sub.add_parser('train-student', parents=[common], help='train one student against a teacher')
    student.add_argument('--teacher', type=str, default=None, metavar='CKPT', help='teacher checkpoint')
    student.add_argument('--variant', type=str, default='ours-full', choices=[t.value for t in VariantTag])
    student.add_argument('--noise-std', type=float, default=3.0)
    student.add_argument('--trial', type=int, default=0)
    student.add_argument('--alpha', type=float, default=None)
    student.add_argument('--epsilon', type=float, default=None)
    student.add_argument('--c-tor', type=float, default=None)
    student.add_argument('--c-d', type=float, default=None)
    student.add_argument('--margin', type=float, default=None)

    for name, help_text in (('run', 'run a full experiment'),
                            ('sweep-threshold', 'threshold sensitivity sweep (table0 preset by default)')):
        runner = sub.add_parser(name, parents=[common], help=help_text)
        runner.add_argument('--trials', type=int, default=None, help='trials per cell')
        runner.add_argument('--workers', type=int, default=None, help='worker threads (0 = all cores)')
        runner.add_argument('--strict', action='store_true', help='exit nonzero if any trial failed')
        if name == 'sweep-threshold':
            runner.add_argument('--mode', choices=['epsilon', 'alpha'], default=None)
            runner.add_argument('--values', type=float, nargs='+', default=None)

    report = sub.add_parser('report', parents=[common], help='re-aggregate stored trial records')
    report.add_argument('--input', type=str, default=None, metavar='PATH',
                        help='trials.jsonl or an output directory (defaults to --output-dir)')
    report.add_argument('--metric', choices=['clean', 'noisy'], default=None)
    return parser


def load_config(args: argparse.Namespace, default_preset: str = 'default') -> ExperimentConfig:
    preset = args.preset or default_preset
    if args.config:
        config = ExperimentConfig.from_yaml(args.config, preset=args.preset, default_preset=default_preset)
    else:
        config = create_experiment_config(preset)
    return config.with_overrides(
        output_dir=args.output_dir,
        master_seed=args.seed,
        trials=getattr(args, 'trials', None),
        workers=getattr(args, 'workers', None),
    )


def _single_trial(config: ExperimentConfig, noise_std: float, variant_tag: str, trial: int, **overrides):
    variant = config.variant_for(variant_tag, noise_std).with_overrides(**overrides)
    spec = config.trial_spec(CellSpec(noise_std, variant), trial)
    state = DatasetStage().process(spec).data
    return spec, state


def cmd_train_teacher(args: argparse.Namespace) -> int:
    config = load_config(args).validate()
    spec, state = _single_trial(config, args.noise_std, 'teacher', args.trial)
    checkpoint = config.output_dir / 'checkpoints' / f'teacher_{spec.teacher_key}.ckpt'
    outcome = train_teacher(state.train, spec.teacher_config, checkpoint)
    outcome.trace.write_jsonl(config.output_dir / 'trials' / f'trace_teacher_{spec.teacher_key}.jsonl')
    result = evaluate(outcome.network, state.test)
    print(json.dumps({"checkpoint": str(outcome.checkpoint_path), **result.to_dict()}, indent=2))
    return EXIT_OK


def cmd_train_student(args: argparse.Namespace) -> int:
    config = load_config(args).validate()
    spec, state = _single_trial(config, args.noise_std, args.variant, args.trial,
                                alpha=args.alpha, epsilon=args.epsilon, c_tor=args.c_tor,
                                c_d=args.c_d, margin=args.margin)
    teacher = load_network(args.teacher) if args.teacher else None
    if teacher is None and spec.variant.needs_teacher:
        teacher = train_teacher(state.train, spec.teacher_config).network

    outcome = train_student(state.train, teacher, spec.student_config)
    tag = spec.variant.tag.value
    checkpoint = save_network(outcome.network, config.output_dir / 'checkpoints' / f'student_{tag}_{spec.teacher_key}.ckpt')
    outcome.trace.write_jsonl(config.output_dir / 'trials' / f'trace_{tag}_{spec.teacher_key}.jsonl')
    result = evaluate(outcome.network, state.test)
    payload = {"checkpoint": str(checkpoint), **result.to_dict()}
    if outcome.threshold is not None:
        payload["threshold"] = outcome.threshold.to_dict()
        payload["outlier_fraction"] = outcome.outlier_fraction
    print(json.dumps(payload, indent=2, default=str))
    return EXIT_OK


def cmd_run(args: argparse.Namespace, default_preset: str = 'default') -> int:
    config = load_config(args, default_preset)
    if getattr(args, 'mode', None) or getattr(args, 'values', None):
        sweep = dict(config['threshold'].get('sweep') or {'mode': 'epsilon', 'values': []})
        sweep.update({k: v for k, v in (('mode', args.mode), ('values', args.values)) if v is not None})
        config = config.with_overrides(threshold={'sweep': sweep})
    result = run_experiment(config)
    print(Path(result.paths['table_text']).read_text(encoding='utf-8'))
    if result.failed:
        get_logger().log_failure(f"{len(result.failed)} trial(s) failed")
        if args.strict:
            return EXIT_FAILED
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    config = load_config(args)
    source = Path(args.input) if args.input else config.output_dir
    reports = load_trial_reports(source)
    metric = args.metric or config.metric
    out = source if source.is_dir() else source.parent.parent
    table = emit_table(reports, out / 'tables', metric)
    emit_plot_data(out / 'plots', reports=reports, metric=metric)
    print(table.text)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_log_level(args.log_level)
    commands = {
        'train-teacher': cmd_train_teacher,
        'train-student': cmd_train_student,
        'run': cmd_run,
        'sweep-threshold': lambda a: cmd_run(a, default_preset='table0'),
        'report': cmd_report,
    }
    try:
        return commands[args.command](args)
    except ConfigValidationError as e:
        get_logger().log_error(e, "while validating the config")
        print(str(e), file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        get_logger().log_error(e, f"during '{args.command}'")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
