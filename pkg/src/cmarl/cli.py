#!/usr/bin/env python3
"""C-MARL lab - Command-line interface module."""

import argparse
import os
import sys
import threading
import time
from dataclasses import replace

from .config import RunConfig
from .core import CmarlError
from .experiment import PHASES, Experiment
from .logger import setup_logger


# ANSI color codes for terminal output (only used colors)
class Colors:
    RESET = '\033[0m'
    BOLD = '\033[1m'
    DIM = '\033[2m'

    RED = '\033[31m'
    GREEN = '\033[32m'
    YELLOW = '\033[33m'
    CYAN = '\033[36m'


class ProgressIndicator:
    """Animated progress indicator for long-running phases."""

    def __init__(self, message="Processing", stream=None):
        self.message = message
        self.stream = stream or sys.stdout
        self.running = False
        self.thread = None
        self.spinner_chars = ['⠋', '⠙', '⠹', '⠸', '⠼', '⠴', '⠦', '⠧', '⠇', '⠏']
        self.current_char = 0

    def _animate(self):
        """Animation loop that runs in a separate thread."""
        while self.running:
            char = self.spinner_chars[self.current_char]
            self.stream.write(f'\r{Colors.CYAN}{char} {self.message}...{Colors.RESET}')
            self.stream.flush()
            self.current_char = (self.current_char + 1) % len(self.spinner_chars)
            time.sleep(0.1)

    def start(self):
        if not self.running and self.stream.isatty():
            self.running = True
            self.thread = threading.Thread(target=self._animate, daemon=True)
            self.thread.start()

    def stop(self):
        """Stop the progress indicator and clear the line."""
        if self.running:
            self.running = False
            if self.thread:
                self.thread.join(timeout=0.2)
            self.stream.write('\r' + ' ' * (len(self.message) + 10) + '\r')
            self.stream.flush()


def create_parser():
    """Create and configure argument parser."""
    parser = argparse.ArgumentParser(
        prog="cmarl",
        description="Curriculum entropy-aware multi-agent RL on a synthetic consultation task",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s run --config config/default.env          # Every phase, resuming from existing artifacts
  %(prog)s gen-data --config config/default.env --seed 1
  %(prog)s train-attending --config my.env -vv      # Rerun one phase with INFO logging
  %(prog)s theory --config config/default.env       # Curriculum vs pooled SGD comparison
  %(prog)s report --config config/default.env       # CSV tables and figures
        """
    )

    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        '--config',
        type=str,
        default=None,
        help='Run configuration file (KEY=VALUE lines, CMARL_ prefix)'
    )
    parent.add_argument(
        '--seed',
        type=int,
        default=None,
        help='Override the configured seed'
    )
    parent.add_argument(
        '-v',
        '--verbose',
        action='count',
        default=0,
        help='Increase verbosity level (use -v, -vv, -vvv for different levels: WARNING, INFO, DEBUG)'
    )

    subparsers = parser.add_subparsers(dest='command', metavar='command')
    descriptions = {
        "gen-data": "Generate the synthetic train/test dataset",
        "train-triage": "Train the triage agent",
        "run-specialists": "Route every case and record specialist answers",
        "stratify": "Split training cases by specialist accuracy and build the stage plan",
        "train-attending": "Train the attending agent through the stage plan",
        "evaluate": "Evaluate with N=1 and with majority-vote test-time scaling",
        "theory": "Compare staged and pooled SGD on quadratic losses",
        "report": "Write CSV tables and static figures",
    }
    for phase in PHASES:
        subparsers.add_parser(phase, parents=[parent], help=descriptions[phase])
    run = subparsers.add_parser('run', parents=[parent], help='Run every phase in order')
    run.add_argument(
        '--force',
        action='store_true',
        help='Rerun phases whose artifacts already exist'
    )
    init = subparsers.add_parser('init-config', parents=[parent], help='Write a configuration file with defaults')
    init.add_argument('path', type=str, help='Destination file')

    return parser


def run_phases(experiment, phases, force=True):
    """Run phases with a spinner each; returns the number executed."""
    executed = 0
    for phase in phases:
        progress = ProgressIndicator(f"Running {phase}")
        progress.start()
        started = time.time()
        try:
            ran = experiment.run_phase(phase, force=force)
        finally:
            progress.stop()
        if ran:
            executed += 1
            print(f"{Colors.GREEN}✓ {phase}{Colors.RESET} {Colors.DIM}({time.time() - started:.1f}s){Colors.RESET}")
        else:
            print(f"{Colors.DIM}- {phase} (artifacts present){Colors.RESET}")
    return executed


def main(argv=None):
    """Main function with command-line interface; returns the exit status."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    if args.command == 'init-config':
        config = RunConfig() if args.seed is None else replace(RunConfig(), seed=args.seed)
        config.save(args.path)
        print(f"{Colors.GREEN}✓ Configuration written to {args.path}{Colors.RESET}")
        return 0

    try:
        config = RunConfig.load(args.config, seed=args.seed)
    except CmarlError as e:
        print(f"{Colors.RED}Configuration error: {str(e)}{Colors.RESET}")
        return 1

    logger = setup_logger(verbosity=args.verbose, log_file=os.path.join(config.output_dir, 'cmarl.log'))
    logger.info(f"Command {args.command} started (seed {config.seed}, output {config.output_dir})")

    try:
        experiment = Experiment(config)
        if args.command == 'run':
            run_phases(experiment, PHASES, force=args.force)
        else:
            run_phases(experiment, [args.command])
    except KeyboardInterrupt:
        print(f"\n{Colors.YELLOW}Operation cancelled by user (Ctrl+C){Colors.RESET}")
        logger.info("Operation cancelled by user")
        return 130
    except CmarlError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"{Colors.RED}✗ {str(e)}{Colors.RESET}")
        return 1

    logger.info("Command completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
