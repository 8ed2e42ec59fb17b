"""Entry point for `python -m mv_maxprinciple`."""

import sys

from .cli import main

sys.exit(main())
