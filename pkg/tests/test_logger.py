"""Tests for the logger module."""

import logging
import os
import tempfile

import pytest

from cmarl.logger import get_logger, reset_logger, setup_logger


class TestLogger:
    """Test cases for logger setup functionality."""

    def setup_method(self):
        self.tmpdir = tempfile.mkdtemp()
        self.log_file = os.path.join(self.tmpdir, "cmarl.log")

    def teardown_method(self):
        for name in ("cmarl_test_default", "cmarl_test_filtering", "cmarl_test_functionality",
                     "cmarl_test_nested", "cmarl_test_console"):
            reset_logger(name)

    def test_setup_logger_default_verbosity(self):
        """Test logger setup with default verbosity maps to INFO with file and console handlers."""
        logger = setup_logger("cmarl_test_default", log_file=self.log_file)

        assert isinstance(logger, logging.Logger)
        assert logger.level == logging.INFO
        assert len(logger.handlers) == 2

    @pytest.mark.parametrize("verbosity,level", [
        (0, logging.ERROR),
        (1, logging.WARNING),
        (2, logging.INFO),
        (3, logging.DEBUG),
        (5, logging.DEBUG),
    ])
    def test_setup_logger_verbosity_levels(self, verbosity, level):
        """Test verbosity count to level mapping, capped at DEBUG."""
        name = f"cmarl_test_level_{verbosity}"
        try:
            logger = setup_logger(name, log_file=self.log_file, verbosity=verbosity)
            assert logger.level == level
        finally:
            reset_logger(name)

    def test_setup_logger_no_duplicate_handlers(self):
        """Test that calling setup_logger twice doesn't add duplicate handlers."""
        logger1 = setup_logger("cmarl_test_default", log_file=self.log_file)
        count = len(logger1.handlers)
        logger2 = setup_logger("cmarl_test_default", log_file=self.log_file)

        assert logger1 is logger2
        assert len(logger2.handlers) == count

    def test_logger_formatter(self):
        """Test that handlers use the shared message format."""
        logger = setup_logger("cmarl_test_default", log_file=self.log_file)

        for handler in logger.handlers:
            assert handler.formatter._fmt == '%(asctime)s - %(levelname)s - %(message)s'

    def test_console_only_logger(self):
        """Test that log_file=None configures only a console handler."""
        logger = setup_logger("cmarl_test_console", log_file=None)

        assert [type(h).__name__ for h in logger.handlers] == ['StreamHandler']

    def test_log_file_directory_created(self):
        """Test that a missing log directory is created."""
        nested = os.path.join(self.tmpdir, "run", "cmarl.log")
        setup_logger("cmarl_test_nested", log_file=nested)

        assert os.path.isdir(os.path.dirname(nested))

    def test_logger_functionality(self):
        """Test that module loggers propagate to the configured package logger."""
        logger = setup_logger("cmarl_test_functionality", log_file=self.log_file, verbosity=3)
        child = get_logger("cmarl_test_functionality.grpo")

        child.debug("Debug message")
        logger.info("Info message")
        for handler in logger.handlers:
            handler.flush()

        with open(self.log_file) as f:
            content = f.read()
        assert "Debug message" in content
        assert "Info message" in content

    def test_logger_verbosity_filtering(self):
        """Test that logger filters messages based on verbosity level."""
        logger = setup_logger("cmarl_test_filtering", log_file=self.log_file, verbosity=1)

        logger.debug("Debug message")
        logger.info("Info message")
        logger.warning("Warning message")
        logger.error("Error message")
        for handler in logger.handlers:
            handler.flush()

        with open(self.log_file) as f:
            content = f.read()
        assert "Debug message" not in content
        assert "Info message" not in content
        assert "Warning message" in content
        assert "Error message" in content
