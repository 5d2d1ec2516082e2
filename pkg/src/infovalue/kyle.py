"""Single-auction Kyle economy: closed-form equilibrium, Monte-Carlo auctions, and a
synthetic dataset generator used as ground truth for the whole pipeline.

In the economy a risky asset pays v = p0 + s + eps. One informed trader sees s and
submits x = beta * s; noise traders submit u ~ N(0, sigma_u^2); a competitive market
maker sees y = x + u and sets price = mu + lambda * y. The linear equilibrium is
lambda = sigma_s / (2 sigma_u), beta = sigma_u / sigma_s, mu = p0, alpha = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .io import (
    BUNDLE_FILES,
    N_TOPICS,
    SESSION_OPEN_MS,
    DailyReturnRecord,
    DatasetBundle,
    EmbeddingStore,
    ReportRecord,
    SentenceMeta,
    TickRecord,
    assemble_bundle,
    write_csv_table,
    write_embedding_store,
)
from .microstructure import MINUTES_PER_SESSION

__all__ = [
    "KyleEconomy",
    "KyleEquilibrium",
    "AuctionSamples",
    "EventTruth",
    "SyntheticDataset",
    "rng_for",
    "solve_equilibrium",
    "expected_informed_profit",
    "simulate_auctions",
    "synthesize_dataset",
    "write_dataset",
]

Number = float | Fraction


@dataclass(frozen=True)
class KyleEconomy:
    p0: Number = 100.0
    sigma_s: Number = 2.0
    sigma_eps: Number = 6.0
    sigma_u: Number = 200_000.0

    def __post_init__(self) -> None:
        for name in ("sigma_s", "sigma_eps", "sigma_u"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(float(v))):
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")
        if not self.sigma_s + self.sigma_eps > 0:
            raise ValueError("sigma_s + sigma_eps must be positive")
        if not math.isfinite(float(self.p0)):
            raise ValueError("p0 must be finite")

    @property
    def sigma_v2(self) -> Number:
        return self.sigma_s * self.sigma_s + self.sigma_eps * self.sigma_eps

    @property
    def phi(self) -> Number:
        return self.sigma_s * self.sigma_s / self.sigma_v2


@dataclass(frozen=True)
class KyleEquilibrium:
    lambda_: Number
    beta: Number
    mu: Number
    alpha: Number = 0


def solve_equilibrium(economy: KyleEconomy) -> KyleEquilibrium:
    """(mu, lambda, alpha, beta) of the unique linear equilibrium.

    Arithmetic follows the parameter types: Fractions give exact values.
    """
    if economy.sigma_s == 0 or economy.sigma_u == 0:
        raise ValueError("the equilibrium needs sigma_s > 0 and sigma_u > 0")
    lam = economy.sigma_s / (2 * economy.sigma_u)
    beta = economy.sigma_u / economy.sigma_s
    return KyleEquilibrium(lam, beta, economy.p0, 0 * economy.p0)


def expected_informed_profit(economy: KyleEconomy) -> Number:
    """sigma_s * sigma_u / 2, cross-checked against phi * sigma_v^2 / (4 lambda)."""
    profit = economy.sigma_s * economy.sigma_u / 2
    if economy.sigma_s > 0 and economy.sigma_u > 0:
        alt = economy.phi * economy.sigma_v2 / (4 * solve_equilibrium(economy).lambda_)
        if abs(float(alt) - float(profit)) > 1e-12 * max(abs(float(profit)), 1e-300):
            raise ArithmeticError("informed profit identities disagree")
    return profit


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Counter-based (Philox 4x64) generator for the substream ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, path)])))


# substream tags
_TAG_AUCTION = 1
_TAG_GLOBAL = 2
_TAG_EVENT = 3
_TAG_TICKS = 4
_TAG_SENTENCES = 5


@dataclass(frozen=True, eq=False)
class AuctionSamples:
    """Columns of independent auctions; ``len`` gives the count."""

    s: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    price: np.ndarray
    v: np.ndarray
    profit: np.ndarray

    def __len__(self) -> int:
        return int(self.s.size)


def simulate_auctions(economy: KyleEconomy, n: int, seed: int = 0) -> AuctionSamples:
    if n < 1:
        raise ValueError("n must be at least 1")
    eq = solve_equilibrium(economy)
    lam, beta, mu = float(eq.lambda_), float(eq.beta), float(eq.mu)
    g = rng_for(seed, _TAG_AUCTION)
    s = g.standard_normal(n) * float(economy.sigma_s)
    eps = g.standard_normal(n) * float(economy.sigma_eps)
    u = g.standard_normal(n) * float(economy.sigma_u)
    x = beta * s
    y = x + u
    price = mu + lam * y
    v = float(economy.p0) + s + eps
    return AuctionSamples(s, x, u, y, price, v, (v - price) * x)


# --------------------------------------------------------------------------
# synthetic dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EventTruth:
    stock_id: str
    date: date
    price: float  # pre-event level, also written as the t-2 close
    lambda_log: float  # planted log-return impact per share
    per_dollar_impact: float  # lambda_log / price, the target of lambda / close
    signal: float
    car: float
    has_ticks: bool = False


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    bundle: DatasetBundle
    truth: dict[str, EventTruth]  # keyed by report_id
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def tick_truth(self) -> list[EventTruth]:
        return [t for _, t in sorted(self.truth.items()) if t.has_ticks]


def _weekdays(start: date, end: date) -> list[date]:
    out, d = [], start
    while d <= end:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def _unit(g: np.random.Generator, dims: int) -> np.ndarray:
    w = g.standard_normal(dims)
    return w / np.linalg.norm(w)


def synthesize_dataset(
    economy: KyleEconomy | None = None,
    n_events: int = 1000,
    bars_per_event: int = 3 * MINUTES_PER_SESSION,
    signal_share: float = 0.10,
    dims: int = 64,
    seed: int = 0,
    *,
    n_stocks: int | None = None,
    start_year: int = 2011,
    n_years: int = 10,
    tick_events: int = 50,
    n_topics: int = 0,
    topic_loadings: Sequence[float] | None = None,
    sentence_dims: int = 16,
    revision_dims: int = 3,
    n_factors: int = 8,
    factor_scale: float = 1.0,
    noise_scale: float = 0.1,
    price_dispersion: float = 0.3,
    public_noise: float = 3e-4,
) -> SyntheticDataset:
    """Synthetic reports, returns, embeddings and tick streams from a Kyle economy.

    Each event draws a price level P, a signal s and a residual eps scaled by P/p0,
    and noise-trader volatility scaled by p0/P, so the per-dollar impact lambda/p0^2
    is the same for every event. The realized CAR is (s + eps) / P.

    The report embedding is h * w + F L + noise_scale * Z with w a hidden unit
    direction, L fixed factor loadings and h a standardized score whose squared
    correlation with the CAR equals ``signal_share``: h = sqrt(share) r/sd(r) +
    sqrt(1 - share) z. A least-squares forecast from w'X therefore explains a
    ``signal_share`` fraction of return variance.

    The latest ``tick_events`` events (so they fall in test years) get ``bars_per_event`` minutes of ticks over
    consecutive business-day sessions centered on the event. Minute k carries
    flow f_k = x/K + u_k with u_k ~ N(0, sigma_u^2/K); a quote is posted one second
    into the minute around a mid that moved by public noise, and the trade prints
    thirty seconds later at exactly the ask (buy) or bid (sell), its log price equal
    to the mid plus lambda_log * f_k.
    """
    economy = economy or KyleEconomy()
    if n_events < 1:
        raise ValueError("n_events must be at least 1")
    if dims < 1:
        raise ValueError("dims must be at least 1")
    if not 0 <= signal_share <= 1:
        raise ValueError("signal_share must lie in [0, 1]")
    if bars_per_event < MINUTES_PER_SESSION or bars_per_event % MINUTES_PER_SESSION:
        raise ValueError(f"bars_per_event must be a positive multiple of {MINUTES_PER_SESSION}")
    if economy.sigma_s <= 0 or economy.sigma_u <= 0:
        raise ValueError("the economy needs sigma_s > 0 and sigma_u > 0")
    if not 0 <= n_topics <= N_TOPICS:
        raise ValueError(f"n_topics must lie in [0, {N_TOPICS}]")
    if n_years < 1:
        raise ValueError("n_years must be at least 1")
    m_sessions = bars_per_event // MINUTES_PER_SESSION
    spacing = max(3, m_sessions)

    eq = solve_equilibrium(economy)
    p0 = float(economy.p0)
    sig_s, sig_e, sig_u = float(economy.sigma_s), float(economy.sigma_eps), float(economy.sigma_u)
    lam0 = float(eq.lambda_)
    sd_r = math.sqrt(sig_s * sig_s + sig_e * sig_e) / p0  # CAR std, identical across events

    days = _weekdays(date(start_year, 1, 1), date(start_year + n_years - 1, 12, 31))
    lead = (m_sessions - 1) // 2
    slots = list(range(lead + 1, len(days) - m_sessions, spacing))
    n_stocks = n_stocks or max(1, math.ceil(n_events / max(1, len(slots) // 4)))
    if n_events > n_stocks * len(slots):
        raise ValueError("too many events for the calendar; raise n_stocks or n_years")

    g0 = rng_for(seed, _TAG_GLOBAL)
    w = _unit(g0, dims)
    L = g0.standard_normal((n_factors, dims)) / math.sqrt(dims) * factor_scale if n_factors else None
    ws = _unit(g0, sentence_dims) if n_topics else None
    if topic_loadings is None:
        topic_loadings = [1.0 - t / max(1, n_topics) for t in range(n_topics)]
    alpha_t = np.asarray(topic_loadings, dtype=np.float64)
    if alpha_t.shape != (n_topics,):
        raise ValueError("topic_loadings needs one entry per topic")
    # events per stock as even as possible, dates drawn without replacement from the slots
    per_stock = np.full(n_stocks, n_events // n_stocks)
    per_stock[: n_events % n_stocks] += 1
    events: list[tuple[date, str, int]] = []  # (date, stock, day index)
    for k in range(n_stocks):
        if per_stock[k] == 0:
            continue
        pick = np.sort(g0.choice(len(slots), size=int(per_stock[k]), replace=False))
        sid = f"S{k:04d}"
        events.extend((days[slots[i]], sid, slots[i]) for i in pick)
    events.sort()
    n_analysts = 5

    X = np.empty((n_events, dims), dtype=np.float32)
    R = np.empty((n_events, revision_dims), dtype=np.float32) if revision_dims else None
    reports, returns, sentences, sent_vecs, ticks = [], [], [], [], []
    truth: dict[str, EventTruth] = {}
    for e, (day, sid, di) in enumerate(events):
        g = rng_for(seed, _TAG_EVENT, e)
        price = p0 * math.exp(price_dispersion * g.standard_normal())
        scale = price / p0
        s = sig_s * scale * g.standard_normal()
        eps = sig_e * scale * g.standard_normal()
        car = (s + eps) / price
        h = math.sqrt(signal_share) * car / sd_r + math.sqrt(1 - signal_share) * g.standard_normal()
        x = g.standard_normal(dims) * noise_scale + h * w
        if L is not None:
            x += g.standard_normal(n_factors) @ L
        X[e] = x
        if R is not None:
            R[e] = 0.5 * h + g.standard_normal(revision_dims)
        rid = f"R{e:06d}"
        ea = day - timedelta(days=int(g.integers(0, 92)))
        analyst = int(g.integers(n_analysts))
        reports.append(ReportRecord(rid, sid, f"A{sid[1:]}{analyst}", f"B{analyst % 3}", day, ea, e, 1.0))
        returns.append(DailyReturnRecord(sid, day, car, price, None))

        if n_topics:
            gs = rng_for(seed, _TAG_SENTENCES, e)
            idx = 0
            for t in range(n_topics):
                for _ in range(int(gs.integers(1, 4))):
                    tok = int(gs.integers(5, 61))
                    vec = alpha_t[t] * h * ws + gs.standard_normal(sentence_dims) * noise_scale * 3
                    sentences.append(SentenceMeta(rid, idx, t, tok, len(sent_vecs)))
                    sent_vecs.append(vec)
                    idx += 1

        sig_u_e = sig_u / scale
        lam_e = lam0 * scale * scale  # dollars per share
        lam_log = lam_e / price
        with_ticks = e >= n_events - tick_events
        truth[rid] = EventTruth(sid, day, price, lam_log, lam_log / price, s, car, with_ticks)
        if with_ticks:
            beta_e = sig_u_e / (sig_s * scale)
            sessions = [days[di - lead + j] for j in range(m_sessions)]
            ticks.extend(_event_ticks(rng_for(seed, _TAG_TICKS, e), sid, sessions, price,
                                      beta_e * s, sig_u_e, lam_log, public_noise))

    stores = {"report": EmbeddingStore(X)}
    if R is not None:
        stores["revision"] = EmbeddingStore(R)
    if n_topics:
        stores["sentence"] = EmbeddingStore(np.asarray(sent_vecs, dtype=np.float32))
    bundle = assemble_bundle(reports, sentences, ticks, returns, stores)
    params = {
        "economy": {k: float(v) for k, v in asdict(economy).items()},
        "n_events": n_events,
        "bars_per_event": bars_per_event,
        "signal_share": signal_share,
        "dims": dims,
        "seed": seed,
        "n_stocks": n_stocks,
        "start_year": start_year,
        "n_years": n_years,
        "tick_events": min(tick_events, n_events),
        "n_topics": n_topics,
        "topic_loadings": [float(a) for a in alpha_t],
        "sentence_dims": sentence_dims,
        "revision_dims": revision_dims,
        "n_factors": n_factors,
        "factor_scale": factor_scale,
        "noise_scale": noise_scale,
        "price_dispersion": price_dispersion,
        "public_noise": public_noise,
        "per_dollar_impact": lam0 / (p0 * p0),
        "expected_informed_profit": float(expected_informed_profit(economy)),
    }
    return SyntheticDataset(bundle, truth, params)


def _event_ticks(g, sid, sessions, price, informed, sig_u, lam_log, public_noise) -> list[TickRecord]:
    K_day = MINUTES_PER_SESSION
    K = K_day * len(sessions)
    flow = informed / K + g.standard_normal(K) * (sig_u / math.sqrt(K))
    eta = g.standard_normal(K) * public_noise
    logp = math.log(price)
    out = []
    for k in range(K):
        day = sessions[k // K_day]
        t0 = SESSION_OPEN_MS + (k % K_day) * 60_000
        mid_log = logp + eta[k]
        half = lam_log * abs(flow[k])
        mid = math.exp(mid_log)
        bid, ask = math.exp(mid_log - half), math.exp(mid_log + half)
        out.append(TickRecord(sid, day, t0 + 1000, mid, 100.0, bid, ask, "quote"))
        trade = ask if flow[k] > 0 else bid
        out.append(TickRecord(sid, day, t0 + 31_000, trade, abs(float(flow[k])), None, None, "trade"))
        logp = math.log(trade)
    return out


def write_dataset(data: SyntheticDataset, out_dir: str | Path) -> Path:
    """Write every table and store plus manifest.json; output bytes depend only on ``data``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = data.bundle
    write_csv_table(out / BUNDLE_FILES["reports"], "report", b.reports)
    write_csv_table(out / BUNDLE_FILES["returns"], "return", b.returns)
    write_csv_table(out / BUNDLE_FILES["ticks"], "tick", b.ticks)
    write_embedding_store(out / BUNDLE_FILES["report_store"], b.stores["report"])
    if "revision" in b.stores:
        write_embedding_store(out / BUNDLE_FILES["revision_store"], b.stores["revision"])
    if "sentence" in b.stores:
        write_csv_table(out / BUNDLE_FILES["sentences"], "sentence", b.sentences)
        write_embedding_store(out / BUNDLE_FILES["sentence_store"], b.stores["sentence"])
    with open(out / "truth.csv", "w", newline="") as fh:
        fh.write("report_id,stock_id,date,price,lambda_log,per_dollar_impact,signal,car,has_ticks\n")
        for rid in sorted(data.truth):
            t = data.truth[rid]
            fh.write(f"{rid},{t.stock_id},{t.date.isoformat()},{t.price!r},{t.lambda_log!r},"
                     f"{t.per_dollar_impact!r},{t.signal!r},{t.car!r},{int(t.has_ticks)}\n")
    manifest = {"params": data.params, "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
