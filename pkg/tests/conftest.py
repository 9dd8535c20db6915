import numpy as np
import pytest


def write_stock_csv(path, dates, rows):
    """rows: iterable of (open, high, low, adj_close, volume) per date."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,open,high,low,adj_close,volume\n")
        for d, r in zip(dates, rows):
            fh.write(d + "," + ",".join(f"{v:.10g}" for v in r) + "\n")


def write_manifest(path, entries):
    """entries: iterable of (ticker, filename) or (ticker, filename, sector)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ticker,path,sector\n")
        for e in entries:
            fh.write(",".join(e) + "\n")


def make_dataset(tmp_path, tickers, dates, value_fn, sectors=None):
    """Write per-stock CSVs plus a manifest; value_fn(ticker, day_index) must
    return the 5 raw indicator values."""
    entries = []
    for t in tickers:
        rows = [value_fn(t, j) for j in range(len(dates))]
        write_stock_csv(tmp_path / f"{t}.csv", dates, rows)
        sector = (sectors or {}).get(t, "")
        entries.append((t, f"{t}.csv", sector))
    manifest = tmp_path / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest


def trading_dates(n_days, start="2023-01-02"):
    from datetime import date, timedelta
    d = date.fromisoformat(start)
    out = []
    while len(out) < n_days:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += timedelta(days=1)
    return out


def random_walk_dataset(tmp_path, n_stocks=4, n_days=60, seed=0, sectors=None):
    rng = np.random.default_rng(seed)
    tickers = [f"S{i:02d}" for i in range(n_stocks)]
    dates = trading_dates(n_days)
    paths = {t: 100.0 * np.exp(np.cumsum(rng.normal(0, 0.02, n_days))) for t in tickers}

    def values(t, j):
        c = paths[t][j]
        return (c * 0.999, c * 1.01, c * 0.99, c, 1e6 * (1 + 0.1 * rng.random()))

    return make_dataset(tmp_path, tickers, dates, values, sectors=sectors)


@pytest.fixture
def dataset_factory(tmp_path):
    def factory(**kwargs):
        return random_walk_dataset(tmp_path, **kwargs)
    return factory
