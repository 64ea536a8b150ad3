import sys

from subco_tracker.cli import main

sys.exit(main())
