from fieldnet.cli import cli as cli
