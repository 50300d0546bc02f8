#!/usr/bin/env python3
"""
riskgrid command line
- Subcommands generate, run, moran, fit, report routed to handler functions
- Config from one JSON file, environment from .env, flags override both
- Exit codes: 0 success, 1 input error, 2 numeric failure
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone

from dotenv import load_dotenv

from .services.pipeline_service import PipelineService
from .services.synthetic_service import generate_synthetic
from .utils import constants
from .utils.config import load_config
from .utils.errors import RiskGridError
from .utils.json_encoder import NumpyEncoder
from .utils.logging_utils import setup_logging

logger = logging.getLogger('riskgrid.cli')

COMMANDS = ('generate', 'run', 'moran', 'fit', 'report')


def _add_common(parser):
    parser.add_argument('--config', required=True, help='Pipeline config JSON')
    parser.add_argument('--seed', type=int, help='Global seed')
    parser.add_argument('--reproducible', action='store_true', default=None,
                        help='Suppress timestamps so repeated runs are byte-identical')
    parser.add_argument('--threads', type=int, help='Worker thread cap (default: RISKGRID_THREADS or 1)')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    parser.add_argument('--output-dir', dest='output_dir', help='Output directory')
    parser.add_argument('--cell-size', dest='cell_size', type=float)
    parser.add_argument('--k-neighbors', dest='k_neighbors', type=int)
    parser.add_argument('--n-sims', dest='n_sims', type=int)
    parser.add_argument('--alpha', type=float)
    parser.add_argument('--cv-folds', dest='cv_folds', type=int)
    parser.add_argument('--models', help='Comma-separated subset of ' + ','.join(constants.MODEL_KEYS))


def build_parser():
    parser = argparse.ArgumentParser(prog='riskgrid', description='Spatial risk-terrain modelling toolkit')
    subparsers = parser.add_subparsers(dest='command', required=True)
    helps = {
        'generate': 'Write a synthetic city (boundary, event epochs, layers, hotspot mask)',
        'run': 'Full pipeline: grid, weights, Moran, models, evaluation, report',
        'moran': "Global and local Moran's I on an existing feature matrix",
        'fit': 'Fit and evaluate the models on an existing feature matrix',
        'report': 'Render maps and the manifest from an existing run',
    }
    for command in COMMANDS:
        _add_common(subparsers.add_parser(command, help=helps[command]))
    return parser


def overrides_from_args(args):
    overrides = {
        'seed': args.seed,
        'reproducible': args.reproducible,
        'threads': args.threads,
        'output_dir': args.output_dir,
        'cell_size': args.cell_size,
        'k_neighbors': args.k_neighbors,
        'n_sims': args.n_sims,
        'alpha': args.alpha,
        'cv_folds': args.cv_folds,
    }
    if args.models:
        overrides['models'] = [m.strip() for m in args.models.split(',') if m.strip()]
    return overrides


def create_success_response(body):
    return {'status_code': constants.EXIT_OK, 'body': body}


def create_error_response(message, status_code, stage=None):
    """Create standardized error response"""
    return {
        'error': message,
        'stage': stage,
        'status_code': status_code,
        'timestamp': datetime.now(timezone.utc).isoformat(),
    }


def handle_generate(config, args):
    dataset = generate_synthetic(config, seed=args.seed)
    return create_success_response({'files': dataset.paths, 'n_hotspot_cells': int(dataset.hotspot_mask.sum())})


def handle_run(config, args):
    service = PipelineService(config)
    report = service.run()
    return create_success_response({'output_dir': str(service.output.root), 'files': report.files,
                                    'warnings': report.warnings})


def handle_moran(config, args):
    service = PipelineService(config)
    report = service.run_moran()
    return create_success_response({'output_dir': str(service.output.root), 'moran': report.moran.to_dict()})


def handle_fit(config, args):
    service = PipelineService(config)
    report = service.run_fit()
    return create_success_response({'output_dir': str(service.output.root),
                                    'models': list(report.fits), 'warnings': report.warnings})


def handle_report(config, args):
    service = PipelineService(config)
    report = service.run_report()
    return create_success_response({'output_dir': str(service.output.root), 'files': report.files})


HANDLERS = {
    'generate': handle_generate,
    'run': handle_run,
    'moran': handle_moran,
    'fit': handle_fit,
    'report': handle_report,
}


def cli_handler(args):
    """Routes a parsed command to its handler and maps failures to error responses"""
    logger.debug(f"Command {args.command} with config {args.config}")
    try:
        config = load_config(args.config, overrides_from_args(args))
        handler = HANDLERS.get(args.command)
        if handler is None:
            return create_error_response(f"Unknown command: {args.command}. Available commands: "
                                         f"{', '.join(COMMANDS)}", constants.EXIT_INPUT_ERROR)
        return handler(config, args)
    except RiskGridError as e:
        logger.error(str(e))
        return create_error_response(e.message, e.exit_code, e.stage)
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return create_error_response(f"Internal error: {e}", constants.EXIT_NUMERIC_ERROR)


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose)
    response = cli_handler(args)
    if response['status_code'] == constants.EXIT_OK:
        print(json.dumps(response['body'], cls=NumpyEncoder, sort_keys=True, indent=2))
    return response['status_code']


if __name__ == '__main__':
    sys.exit(main())
