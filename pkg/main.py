"""
Main Entry Point for the adaptive regularization CLI
Generates data, trains, evaluates and analyzes regularization factors from the command line.
"""

import sys

from adareg.cli import main

if __name__ == '__main__':
    sys.exit(main())
