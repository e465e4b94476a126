import sys

from zenn.cli import main

sys.exit(main())
