"""Ring protocol for secure multiparty private regression.

Parties sit on a ring with the data collector (DC) at position 0; only the DC
ever holds the secret key. A run has three phases:

* setup: the DC generates the key pair, a plaintext ring pass merges running
  column extremes into global normalization bounds, and the DC broadcasts the
  public parameters (public key, codec scale, sensitivity, bounds),
* secure regression: starting with the DC's own contribution, each party
  normalizes its rows, computes local statistics, injects its privacy noise,
  encrypts, homomorphically folds its ciphertexts into the received aggregate,
  and forwards to the next ring neighbor,
* reconstruction: the DC decrypts the final aggregate, repairs and solves the
  noisy objective, and broadcasts the published model to every party.

Messages travel through a pluggable transport (in-process queues or localhost
sockets) in the framed binary form of :mod:`smddp.wire`; a transcript records
every send. Parties run as independent threads regardless of transport, which
matches the no-shared-state concurrency model and keeps the two transports on
one code path.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .ahe import (
    FixedPointCodec,
    PublicKey,
    SecretKey,
    add_statistics,
    decrypt_statistics,
    encrypt_statistics,
    keygen,
)
from .dpfm import (
    DEFAULT_EIG_FLOOR,
    DEFAULT_RIDGE,
    NoiseSpec,
    PrivacyParams,
    global_sensitivity,
    local_budget,
    noise_inject,
    optimize,
    party_rng,
)
from .linmodel import (
    Dataset,
    LocalStatistics,
    ModelResult,
    NormalizationBounds,
    compute_local_min_max,
    compute_local_statistics,
    merge_bounds,
    normalize,
    objective_error,
)
from .wire import AggregateMessage, BoundsMessage, PublishMessage, SetupMessage

__all__ = [
    "ProtocolConfig",
    "PartyState",
    "TranscriptEntry",
    "Transcript",
    "ProtocolError",
    "TransportTimeout",
    "IncompleteRingError",
    "MinMaxProtocol",
    "BROADCAST",
    "run_setup",
    "party_step",
    "reconstruct",
    "run_protocol",
    "collect_party_results",
    "verify_transcript_privacy",
]

BROADCAST = -1

# Seed-stream tag separating the DC's key-generation draws from party noise.
_KEYGEN_STREAM = 0x4B455947


class ProtocolError(RuntimeError):
    """Protocol-level failure (phase order, shapes, decryption)."""


class TransportTimeout(ProtocolError):
    """No message arrived within the per-hop timeout."""


class IncompleteRingError(ProtocolError):
    """Reconstruction attempted before every party contributed."""


class MinMaxProtocol:
    """Strategy for computing the global column extremes during setup.

    The default circulates plaintext running extremes around the ring, so a
    party observes the combined extremes of its predecessors. That leakage is
    deliberate and confined to column minima/maxima; a cryptographic
    comparison protocol can replace it by overriding the three hooks, as long
    as ``finish`` yields the true global bounds at the data collector.
    """

    def start(self, local: NormalizationBounds) -> NormalizationBounds:
        """What the initiating collector puts on the wire."""
        return local

    def merge(
        self, incoming: NormalizationBounds, local: NormalizationBounds
    ) -> NormalizationBounds:
        """Fold one party's extremes into the circulating value."""
        return merge_bounds(incoming, local)

    def finish(self, merged: NormalizationBounds) -> NormalizationBounds:
        """Final global bounds once the pass returns to the collector."""
        return merged


@dataclass(frozen=True)
class ProtocolConfig:
    """Run parameters shared by every party.

    ``privacy=None`` selects zero-noise mode: the statistics travel encrypted
    but carry no privacy noise, which is the baseline the correctness checks
    compare against.
    """

    n_parties: int
    privacy: PrivacyParams | None = None
    key_bits: int = 2048
    codec_scale: int = 10**6
    transport: str = "in-process"
    master_seed: int = 0
    run_index: int = 0
    ridge: float = DEFAULT_RIDGE
    eig_floor: float = DEFAULT_EIG_FLOOR
    unit_row_norm: bool = False
    endpoints: tuple[tuple[str, int], ...] | None = None
    hop_timeout: float = 30.0
    capture_payloads: bool = True
    minmax: MinMaxProtocol = field(default_factory=MinMaxProtocol)

    def __post_init__(self):
        if self.n_parties < 1:
            raise ValueError("need at least one party")
        if self.key_bits < 1024:
            raise ValueError("key_bits below the 1024-bit minimum")
        if self.transport not in ("in-process", "socket"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.endpoints is not None and len(self.endpoints) != self.n_parties:
            raise ValueError("endpoints must list one host:port per party")


@dataclass
class PartyState:
    """One party's private view; never contains another party's plaintext."""

    index: int
    n_parties: int
    dataset: Dataset
    rng: np.random.Generator
    privacy: PrivacyParams | None = None
    unit_row_norm: bool = False
    bounds: NormalizationBounds | None = None
    public_key: PublicKey | None = None
    secret_key: SecretKey | None = None
    codec: FixedPointCodec | None = None
    sensitivity: float | None = None
    local_stats: LocalStatistics | None = None
    result: ModelResult | None = None


@dataclass(frozen=True)
class TranscriptEntry:
    sender: int
    receiver: int  # BROADCAST for the one-entry setup/publish broadcasts
    kind: int
    nbytes: int
    timestamp: float
    payload: bytes | None = None

    @property
    def kind_name(self) -> str:
        return wire.KIND_NAMES[self.kind]


class Transcript:
    """Ordered, thread-safe log of every wire send in one protocol run.

    After a full run the data collector also deposits its phase timings here
    (``phase_ms``: keygen, minmax, regression, reconstruct, total).
    """

    def __init__(self, capture_payloads: bool = True):
        self.entries: list[TranscriptEntry] = []
        self.phase_ms: dict[str, float] = {}
        self._capture = capture_payloads
        self._lock = threading.Lock()

    def record(self, sender: int, receiver: int, data: bytes) -> None:
        entry = TranscriptEntry(
            sender,
            receiver,
            wire.peek_kind(data),
            len(data),
            time.time(),
            data if self._capture else None,
        )
        with self._lock:
            self.entries.append(entry)

    def kinds(self) -> list[int]:
        return [e.kind for e in self.entries]

    def verify_order(self, n_parties: int) -> None:
        """Assert the canonical phase shape: n bounds, setup, n aggregates, publish."""
        expected = (
            [wire.KIND_BOUNDS] * n_parties
            + [wire.KIND_SETUP]
            + [wire.KIND_AGGREGATE] * n_parties
            + [wire.KIND_PUBLISH]
        )
        if self.kinds() != expected:
            raise ProtocolError(
                f"transcript out of protocol order: {[wire.KIND_NAMES[k] for k in self.kinds()]}"
            )

    def to_json(self, path: str, include_payloads: bool = True) -> None:
        rows = []
        for e in self.entries:
            row = {
                "sender": e.sender,
                "receiver": e.receiver,
                "kind": e.kind,
                "kind_name": e.kind_name,
                "nbytes": e.nbytes,
                "timestamp": e.timestamp,
            }
            if include_payloads and e.payload is not None:
                row["payload_hex"] = e.payload.hex()
            rows.append(row)
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1)

    @classmethod
    def from_json(cls, path: str) -> "Transcript":
        with open(path) as fh:
            rows = json.load(fh)
        out = cls()
        for row in rows:
            payload = bytes.fromhex(row["payload_hex"]) if "payload_hex" in row else None
            out.entries.append(
                TranscriptEntry(
                    row["sender"], row["receiver"], row["kind"], row["nbytes"],
                    row["timestamp"], payload,
                )
            )
        return out


# -- transports ---------------------------------------------------------------


class _InProcessTransport:
    """One FIFO of framed messages per party."""

    def __init__(self, n_parties: int):
        self._queues = [queue.Queue() for _ in range(n_parties)]

    def start(self):
        pass

    def send(self, sender: int, receiver: int, data: bytes) -> None:
        self._queues[receiver].put(data)

    def recv(self, receiver: int, timeout: float) -> bytes:
        try:
            return self._queues[receiver].get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"party {receiver}: no message within {timeout}s") from None

    def close(self):
        pass


def _recv_exact(conn: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class _SocketTransport:
    """One localhost TCP listener per party; streams opened lazily per edge."""

    def __init__(self, endpoints):
        self._inboxes = [queue.Queue() for _ in endpoints]
        self._listeners = []
        self._addresses = []
        self._out: dict[tuple[int, int], socket.socket] = {}
        self._out_lock = threading.Lock()
        self._threads = []
        for host, port in endpoints:
            lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            lst.bind((host, port))
            lst.listen()
            self._listeners.append(lst)
            self._addresses.append(lst.getsockname())

    def start(self):
        for idx, lst in enumerate(self._listeners):
            t = threading.Thread(target=self._accept_loop, args=(idx, lst), daemon=True)
            t.start()
            self._threads.append(t)

    def _accept_loop(self, idx: int, lst: socket.socket) -> None:
        while True:
            try:
                conn, _ = lst.accept()
            except OSError:
                return  # listener closed
            t = threading.Thread(target=self._read_loop, args=(idx, conn), daemon=True)
            t.start()
            self._threads.append(t)

    def _read_loop(self, idx: int, conn: socket.socket) -> None:
        while True:
            header = _recv_exact(conn, wire.HEADER_LEN)
            if header is None:
                return
            (length,) = struct.unpack_from(">I", header, 6)
            payload = _recv_exact(conn, length)
            if payload is None:
                return
            self._inboxes[idx].put(header + payload)

    def send(self, sender: int, receiver: int, data: bytes) -> None:
        with self._out_lock:
            conn = self._out.get((sender, receiver))
            if conn is None:
                conn = socket.create_connection(self._addresses[receiver], timeout=10.0)
                self._out[(sender, receiver)] = conn
        conn.sendall(data)

    def recv(self, receiver: int, timeout: float) -> bytes:
        try:
            return self._inboxes[receiver].get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"party {receiver}: no message within {timeout}s") from None

    def close(self):
        for lst in self._listeners:
            lst.close()
        with self._out_lock:
            for conn in self._out.values():
                conn.close()


def _make_transport(config: ProtocolConfig):
    if config.transport == "socket":
        endpoints = config.endpoints or tuple(("127.0.0.1", 0) for _ in range(config.n_parties))
        return _SocketTransport(endpoints)
    return _InProcessTransport(config.n_parties)


# -- protocol operations ------------------------------------------------------


def _keygen_rng(config: ProtocolConfig) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((config.master_seed, _KEYGEN_STREAM, config.run_index))
    )


def _check_datasets(config: ProtocolConfig, datasets: list[Dataset]) -> int:
    if len(datasets) != config.n_parties:
        raise ValueError(f"{config.n_parties} parties but {len(datasets)} datasets")
    d = datasets[0].attrs
    for i, ds in enumerate(datasets):
        if ds.attrs != d:
            raise ProtocolError(f"party {i} has {ds.attrs} attributes, expected {d}")
    return d


def run_setup(
    config: ProtocolConfig, datasets: list[Dataset]
) -> tuple[PublicKey, SecretKey, NormalizationBounds, float]:
    """Setup phase: key pair at the DC, ring-merged global bounds, sensitivity.

    This is the logical operation; :func:`run_protocol` performs the same
    steps over the configured transport.
    """
    d = _check_datasets(config, datasets)
    pk, sk = keygen(config.key_bits, _keygen_rng(config))
    bounds = config.minmax.start(compute_local_min_max(datasets[0]))
    for ds in datasets[1:]:
        bounds = config.minmax.merge(bounds, compute_local_min_max(ds))
    return pk, sk, config.minmax.finish(bounds), global_sensitivity(d)


def party_step(state: PartyState, incoming: AggregateMessage | None) -> AggregateMessage:
    """One party's turn in the secure regression pass.

    Normalizes the party's rows with the global bounds, reduces them to local
    statistics, injects the party's privacy noise (unless running zero-noise),
    encrypts, and folds the ciphertexts into the received aggregate. The
    returned message is what goes to the next ring neighbor.
    """
    if state.bounds is None or state.public_key is None or state.codec is None:
        raise ProtocolError(f"party {state.index}: setup parameters missing")
    normalized = normalize(state.dataset, state.bounds, unit_row_norm=state.unit_row_norm)
    stats = compute_local_statistics(normalized)
    state.local_stats = stats
    if state.privacy is not None:
        spec = NoiseSpec.from_budget(state.sensitivity, local_budget(state.privacy))
        released = noise_inject(stats, spec, state.privacy, state.rng)
    else:
        released = stats
    enc = encrypt_statistics(state.public_key, state.codec, released, state.rng)
    if incoming is None:
        return AggregateMessage(enc, 1)
    if incoming.stats.dim != enc.dim:
        raise ProtocolError(
            f"party {state.index}: aggregate dimension {incoming.stats.dim} != {enc.dim}"
        )
    return AggregateMessage(add_statistics(state.public_key, incoming.stats, enc), incoming.hop_count + 1)


def reconstruct(
    dc_state: PartyState,
    final: AggregateMessage,
    privacy: PrivacyParams | None = None,
    ridge: float = DEFAULT_RIDGE,
    eig_floor: float = DEFAULT_EIG_FLOOR,
) -> ModelResult:
    """Reconstruction at the DC: decrypt, repair-and-solve, package the model.

    Hard-fails unless every party contributed to the aggregate.
    """
    if final.hop_count != dc_state.n_parties:
        raise IncompleteRingError(
            f"aggregate carries {final.hop_count} contributions, expected {dc_state.n_parties}"
        )
    if dc_state.secret_key is None:
        raise ProtocolError("reconstruction requires the secret key (DC only)")
    stats = decrypt_statistics(dc_state.secret_key, dc_state.codec, final.stats)
    repaired, w = optimize(stats, ridge, eig_floor)
    err = objective_error(repaired, w)
    return ModelResult(w, err, dc_state.bounds)


# -- the engine ---------------------------------------------------------------


class _Party:
    """Sequential state machine for one ring position, run on its own thread."""

    def __init__(self, config: ProtocolConfig, index: int, dataset: Dataset, transport, transcript):
        self.config = config
        self.transport = transport
        self.transcript = transcript
        self.state = PartyState(
            index=index,
            n_parties=config.n_parties,
            dataset=dataset,
            rng=party_rng(config.master_seed, index, config.run_index),
            privacy=config.privacy,
            unit_row_norm=config.unit_row_norm,
        )
        self.error: BaseException | None = None
        # Messages that arrived ahead of the phase that consumes them.
        self._pending: dict[int, list] = {k: [] for k in wire.KIND_NAMES}

    # transport helpers

    def _send(self, receiver: int, msg, broadcast: bool = False) -> None:
        data = wire.encode_message(msg)
        if broadcast:
            self.transcript.record(self.state.index, BROADCAST, data)
            for other in range(self.config.n_parties):
                if other != self.state.index:
                    self.transport.send(self.state.index, other, data)
        else:
            self.transcript.record(self.state.index, receiver, data)
            self.transport.send(self.state.index, receiver, data)

    def _recv(self, kind: int):
        if self._pending[kind]:
            return self._pending[kind].pop(0)
        # The awaited message can be up to a full ring pass of work away, so
        # the per-hop budget is granted once per potential hop.
        deadline = time.monotonic() + self.config.hop_timeout * (self.config.n_parties + 1)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportTimeout(
                    f"party {self.state.index}: timed out waiting for "
                    f"{wire.KIND_NAMES[kind]}"
                )
            data = self.transport.recv(self.state.index, remaining)
            msg = wire.decode_message(data)
            got = wire.peek_kind(data)
            if got == kind:
                return msg
            self._pending[got].append(msg)

    @property
    def _next(self) -> int:
        return (self.state.index + 1) % self.config.n_parties

    # phase logic

    def run(self) -> None:
        try:
            if self.state.index == 0:
                self._run_collector()
            else:
                self._run_member()
        except BaseException as exc:  # propagated by the orchestrator
            self.error = exc

    def _apply_setup(self, msg: SetupMessage) -> None:
        st = self.state
        st.public_key = PublicKey(msg.modulus, msg.key_bits)
        st.codec = FixedPointCodec(msg.codec_scale, msg.modulus)
        st.bounds = msg.bounds
        st.sensitivity = msg.sensitivity

    def _run_collector(self) -> None:
        cfg, st = self.config, self.state
        t0 = time.perf_counter()
        pk, sk = keygen(cfg.key_bits, _keygen_rng(cfg))
        st.secret_key = sk
        t1 = time.perf_counter()
        self._send(
            self._next, BoundsMessage(cfg.minmax.start(compute_local_min_max(st.dataset)))
        )
        merged = cfg.minmax.finish(self._recv(wire.KIND_BOUNDS).bounds)
        t2 = time.perf_counter()
        setup = SetupMessage(
            cfg.key_bits, int(pk.n), cfg.codec_scale,
            global_sensitivity(st.dataset.attrs), merged,
        )
        self._send(BROADCAST, setup, broadcast=True)
        self._apply_setup(setup)
        t3 = time.perf_counter()
        self._send(self._next, party_step(st, None))
        final = self._recv(wire.KIND_AGGREGATE)
        t4 = time.perf_counter()
        result = reconstruct(st, final, cfg.privacy, cfg.ridge, cfg.eig_floor)
        t5 = time.perf_counter()
        self._send(BROADCAST, PublishMessage(result), broadcast=True)
        st.result = result
        self.transcript.phase_ms = {
            "keygen_ms": (t1 - t0) * 1e3,
            "minmax_ms": (t2 - t1) * 1e3,
            "regression_ms": (t4 - t3) * 1e3,
            "reconstruct_ms": (t5 - t4) * 1e3,
            "total_ms": (time.perf_counter() - t0) * 1e3,
        }

    def _run_member(self) -> None:
        st = self.state
        incoming = self._recv(wire.KIND_BOUNDS).bounds
        running = self.config.minmax.merge(incoming, compute_local_min_max(st.dataset))
        self._send(self._next, BoundsMessage(running))
        self._apply_setup(self._recv(wire.KIND_SETUP))
        self._send(self._next, party_step(st, self._recv(wire.KIND_AGGREGATE)))
        st.result = self._recv(wire.KIND_PUBLISH).result


def _execute(config: ProtocolConfig, datasets: list[Dataset]) -> tuple[list[_Party], Transcript]:
    _check_datasets(config, datasets)
    transport = _make_transport(config)
    transcript = Transcript(config.capture_payloads)
    parties = [
        _Party(config, i, datasets[i], transport, transcript)
        for i in range(config.n_parties)
    ]
    transport.start()
    threads = [
        threading.Thread(target=p.run, name=f"smddp-party-{i}", daemon=True)
        for i, p in enumerate(parties)
    ]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        transport.close()
    for p in parties:
        if p.error is not None:
            raise p.error
    return parties, transcript


def run_protocol(
    config: ProtocolConfig, datasets: list[Dataset]
) -> tuple[ModelResult, Transcript]:
    """Execute setup, the secure regression ring pass, and reconstruction.

    Returns the published model and the full transcript. Deterministic for a
    fixed (master_seed, run_index), including key generation, so equal seeds
    give identical results on either transport.
    """
    parties, transcript = _execute(config, datasets)
    return parties[0].state.result, transcript


def collect_party_results(
    config: ProtocolConfig, datasets: list[Dataset]
) -> tuple[list[ModelResult], Transcript]:
    """Like :func:`run_protocol` but returning every party's received model."""
    parties, transcript = _execute(config, datasets)
    return [p.state.result for p in parties], transcript


def verify_transcript_privacy(transcript: Transcript) -> dict[str, int]:
    """Mechanical schema check: nothing private ever crossed the wire.

    Every recorded frame must decode cleanly as one of the four message kinds,
    and the only kinds that may carry plaintext reals are the public-parameter
    broadcasts (setup, bounds) and the final publish. Aggregate frames must
    consist solely of ciphertext residues plus the hop counter. Raises
    :class:`ProtocolError` on any violation; returns per-kind frame counts.
    """
    if not transcript.entries:
        raise ProtocolError("empty transcript")
    counts = {name: 0 for name in wire.KIND_NAMES.values()}
    for entry in transcript.entries:
        if entry.payload is None:
            raise ProtocolError("transcript was recorded without payload capture")
        msg = wire.decode_message(entry.payload)  # schema enforcement
        counts[entry.kind_name] += 1
        if entry.kind == wire.KIND_AGGREGATE:
            stats = msg.stats
            nsq = stats.yty.n * stats.yty.n
            flat = [c for row in stats.xtx for c in row] + list(stats.xty) + [stats.yty]
            for c in flat:
                if not 1 <= c.value < nsq:
                    raise ProtocolError("aggregate frame carries a non-ciphertext value")
        elif entry.kind not in (wire.KIND_BOUNDS, wire.KIND_SETUP, wire.KIND_PUBLISH):
            raise ProtocolError(f"unexpected message kind {entry.kind}")
    return counts
