import sys

from dprelevant.cli import main

sys.exit(main())
