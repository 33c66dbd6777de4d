"""Allow `python -m gmop`."""

import sys

from .cli import main

sys.exit(main())
