import sys

from cpsinpaint.cli import main

sys.exit(main())
