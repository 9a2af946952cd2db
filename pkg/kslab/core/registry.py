"""
KS Lab - Run Registry
SQLite registry of sweep cells and their replicas
"""

import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

from . import KSLabError
from ..ui.logger import get_logger

logger = get_logger(__name__)

REGISTRY_FILE = "registry.sqlite"

CELL_STATUSES = ("pending", "running", "done", "failed")


class Registry:
    """SQLite registry manager"""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.conn: Optional[sqlite3.Connection] = None
        self._init_db()

    def _init_db(self):
        """Initialize database and create tables"""
        try:
            self.db_path.parent.mkdir(parents=True, exist_ok=True)
            self.conn = sqlite3.connect(str(self.db_path))
            self.conn.row_factory = sqlite3.Row

            cursor = self.conn.cursor()

            cursor.execute("""
                CREATE TABLE IF NOT EXISTS cells (
                    id INTEGER PRIMARY KEY,
                    theta REAL NOT NULL,
                    n INTEGER NOT NULL,
                    directory TEXT NOT NULL,
                    status TEXT DEFAULT 'pending',
                    error_message TEXT,
                    added_date TEXT,
                    started_date TEXT,
                    completed_date TEXT
                )
            """)

            cursor.execute("""
                CREATE TABLE IF NOT EXISTS replicas (
                    cell_id INTEGER NOT NULL,
                    replica INTEGER NOT NULL,
                    seed_key TEXT NOT NULL,
                    blowup_time REAL,
                    steps INTEGER,
                    checksum TEXT,
                    PRIMARY KEY (cell_id, replica),
                    FOREIGN KEY (cell_id) REFERENCES cells(id)
                )
            """)

            cursor.execute("""
                CREATE INDEX IF NOT EXISTS idx_cells_status
                ON cells(status)
            """)

            self.conn.commit()
            logger.debug("registry.initialized", path=str(self.db_path))

        except sqlite3.Error as e:
            logger.error("registry.init_failed", error=str(e))
            raise RegistryError(f"Failed to initialize registry: {e}")

    def add_cell(self, cell_id: int, theta: float, n: int, directory: Path):
        """Register a cell as pending (re-registering resets it)"""
        now = datetime.now().isoformat()
        try:
            self.conn.execute("""
                INSERT OR REPLACE INTO cells
                (id, theta, n, directory, status, error_message, added_date, started_date, completed_date)
                VALUES (?, ?, ?, ?, 'pending', NULL,
                    COALESCE((SELECT added_date FROM cells WHERE id = ?), ?),
                    NULL, NULL)
            """, (cell_id, theta, n, str(directory), cell_id, now))
            self.conn.execute("DELETE FROM replicas WHERE cell_id = ?", (cell_id,))
            self.conn.commit()
        except sqlite3.Error as e:
            raise RegistryError(f"Failed to add cell {cell_id}: {e}")

    def set_status(self, cell_id: int, status: str, error: Optional[str] = None):
        if status not in CELL_STATUSES:
            raise RegistryError(f"Unknown cell status {status!r}")
        now = datetime.now().isoformat()
        column = {"running": "started_date", "done": "completed_date", "failed": "completed_date"}.get(status)
        try:
            if column:
                self.conn.execute(
                    f"UPDATE cells SET status = ?, error_message = ?, {column} = ? WHERE id = ?",
                    (status, error, now, cell_id),
                )
            else:
                self.conn.execute(
                    "UPDATE cells SET status = ?, error_message = ? WHERE id = ?",
                    (status, error, cell_id),
                )
            self.conn.commit()
        except sqlite3.Error as e:
            raise RegistryError(f"Failed to update cell {cell_id}: {e}")

    def add_replica(self, cell_id: int, replica: int, seed_key, blowup_time: Optional[float],
                    steps: int, checksum: str):
        try:
            self.conn.execute("""
                INSERT OR REPLACE INTO replicas
                (cell_id, replica, seed_key, blowup_time, steps, checksum)
                VALUES (?, ?, ?, ?, ?, ?)
            """, (cell_id, replica, ",".join(str(v) for v in seed_key), blowup_time, steps, checksum))
            self.conn.commit()
        except sqlite3.Error as e:
            raise RegistryError(f"Failed to add replica {replica} of cell {cell_id}: {e}")

    def get_cell(self, cell_id: int) -> Optional[Dict]:
        cursor = self.conn.execute("SELECT * FROM cells WHERE id = ?", (cell_id,))
        row = cursor.fetchone()
        return dict(row) if row else None

    def get_cells(self, status: Optional[str] = None) -> List[Dict]:
        query = "SELECT * FROM cells"
        args = ()
        if status:
            query += " WHERE status = ?"
            args = (status,)
        query += " ORDER BY id"
        return [dict(row) for row in self.conn.execute(query, args).fetchall()]

    def get_replicas(self, cell_id: int) -> List[Dict]:
        cursor = self.conn.execute(
            "SELECT * FROM replicas WHERE cell_id = ? ORDER BY replica", (cell_id,)
        )
        return [dict(row) for row in cursor.fetchall()]

    def get_stats(self) -> Dict:
        """Cell counts per status plus replica and blow-up totals"""
        stats = {status: 0 for status in CELL_STATUSES}
        for row in self.conn.execute("SELECT status, COUNT(*) AS c FROM cells GROUP BY status"):
            stats[row["status"]] = row["c"]
        stats["replicas"] = self.conn.execute("SELECT COUNT(*) FROM replicas").fetchone()[0]
        stats["blowups"] = self.conn.execute(
            "SELECT COUNT(*) FROM replicas WHERE blowup_time IS NOT NULL"
        ).fetchone()[0]
        return stats

    def close(self):
        """Close database connection"""
        if self.conn:
            self.conn.close()
            self.conn = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class RegistryError(KSLabError):
    """Registry I/O failure"""
    pass
