import sys

from promptopt.cli import main

sys.exit(main())
