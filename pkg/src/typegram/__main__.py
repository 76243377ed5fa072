"""Entry point for ``python -m typegram``."""

import sys

from typegram.cli import main

sys.exit(main())
