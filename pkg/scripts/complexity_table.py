"""Print the multiplication-count comparison for the default grid."""

import sys

from otfs_bpicnet.bench import complexity_table, write_complexity_csv

if __name__ == "__main__":
    write_complexity_csv(complexity_table(K=7, L=12, M=4, P=14), sys.stdout)
