import logging
import sys

from app.cli import main
from app.env import GCSF_LOG_LEVEL

if __name__ == "__main__":
    logging.basicConfig(level=GCSF_LOG_LEVEL)

    sys.exit(main(sys.argv[1:]))
