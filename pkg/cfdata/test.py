"""test utilities
(part of cfdata)
"""
import doctest
import unittest

TestCase = unittest.TestCase
TestSuite = unittest.TestSuite

MODULES = [
    "cfdata.utils",
    "cfdata.api",
    "cfdata.trajkit",
    "cfdata.ingest",
    "cfdata.select",
    "cfdata.assess",
    "cfdata.enhance",
    "cfdata.regime",
    "cfdata.synth",
    "cfdata.pipeline",
]


def load_modules(names):
    return [__import__(name, None, None, "x") for name in names]


def doctest_suite(module_names=MODULES):
    """Makes a test suite from doctests."""
    suite = TestSuite()
    for mod in load_modules(module_names):
        suite.addTest(doctest.DocTestSuite(mod))
    return suite


def runTests(suite):
    runner = unittest.TextTestRunner()
    return runner.run(suite)
