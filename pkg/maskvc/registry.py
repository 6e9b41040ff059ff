import hashlib
import re
import sqlite3

_COLUMNS = ('variant', 'pair', 'seed', 'mcd_db', 'param_count', 'masked_l1', 'status', 'message')


class AblationRegistry:
    """Finished ablation cells, so an interrupted ablation can pick up where it stopped."""

    def __init__(self, path='ablation.db'):
        self.conn = sqlite3.connect(str(path), check_same_thread=False)
        self.cur = self.conn.cursor()

        self.cur.execute("""CREATE TABLE IF NOT EXISTS cells (
                            id INTEGER PRIMARY KEY AUTOINCREMENT,
                            cell_key TEXT UNIQUE NOT NULL,
                            variant TEXT NOT NULL,
                            pair TEXT NOT NULL,
                            seed INTEGER NOT NULL,
                            mcd_db REAL,
                            param_count INTEGER,
                            masked_l1 REAL,
                            status TEXT NOT NULL,
                            message TEXT
                        );""")
        self.conn.commit()

    @staticmethod
    def cell_key(variant, pair, seed, fingerprint, iterations):
        raw = '|'.join([variant, pair, str(seed), fingerprint, str(iterations)])
        return hashlib.sha512(raw.encode()).hexdigest()

    @staticmethod
    def cell_dirname(variant, pair, seed):
        return '{0}__{1}__seed{2}'.format(re.sub(r'[^A-Za-z0-9]+', '_', variant).strip('_'),
                                          re.sub(r'[^A-Za-z0-9]+', '_', pair).strip('_'), seed)

    def add_cell(self, key, row):
        values = [row[c] for c in _COLUMNS]
        self.cur.execute('INSERT OR REPLACE INTO cells (cell_key, {0}) VALUES (?, {1})'
                         .format(', '.join(_COLUMNS), ', '.join('?' * len(_COLUMNS))), [key] + values)
        self.conn.commit()

    def get_cell(self, key):
        self.cur.execute('SELECT {0} FROM cells WHERE cell_key = ?'.format(', '.join(_COLUMNS)), (key,))
        result = self.cur.fetchone()
        if result:
            row = dict(zip(_COLUMNS, result))
            for name in ('mcd_db', 'masked_l1'):
                if row[name] is None:
                    row[name] = float('nan')
            return row
        return None

    def completed(self):
        self.cur.execute("SELECT {0} FROM cells WHERE status = 'ok' ORDER BY id".format(', '.join(_COLUMNS)))
        return [dict(zip(_COLUMNS, r)) for r in self.cur.fetchall()]

    def close(self):
        self.conn.close()
