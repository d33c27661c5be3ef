import sys

from entitrend.interfaces.cli import main

sys.exit(main())
