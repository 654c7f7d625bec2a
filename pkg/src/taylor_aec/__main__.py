import sys

from taylor_aec.cli import main

sys.exit(main())
