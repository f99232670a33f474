"""Trajectory-based private contact tracing toolkit."""

__version__ = "0.1.0"

from .chunking import (
    ChunkedDictionary,
    Manifest,
    build_chunked_dictionary,
    dedup_sorted_keys,
    load_chunked_dictionary,
    map_to_chunked_dictionary,
    plan_chunk_count,
    save_chunked_dictionary,
)
from .datagen import Dataset, GeneratorConfig, generate, read_csv, write_csv
from .dictionary import HashDictionary, SuccinctTrie, build_trie
from .enclave import (
    Enclave,
    EnclaveBudget,
    HandshakeClient,
    IntegrityError,
    ServiceError,
    SessionKey,
    attest_and_exchange,
    decode_response,
    encode_request,
    open_blob,
    seal,
)
from .encoding import (
    CellCoords,
    EncodingParams,
    MixMode,
    TrajectoryPoint,
    encode_points,
    trajectory_hash,
)
from .oracle import (
    ConfusionMatrix,
    ExactThresholds,
    exact_contact,
    exact_contact_doe,
    evaluate,
)
from .psi import (
    ALL_MODES,
    MODE_DOE,
    MODE_NFP,
    MODE_STPSI,
    FingerprintMismatch,
    PsiConfig,
    PsiStats,
    Query,
    make_batch,
    nfp_st_psi,
    run_protocol,
    st_psi,
    st_psi_doe,
)
from .service import PctServer, PctService

__all__ = [
    "ALL_MODES",
    "CellCoords",
    "ChunkedDictionary",
    "ConfusionMatrix",
    "Dataset",
    "Enclave",
    "EnclaveBudget",
    "EncodingParams",
    "ExactThresholds",
    "FingerprintMismatch",
    "GeneratorConfig",
    "HandshakeClient",
    "HashDictionary",
    "IntegrityError",
    "MODE_DOE",
    "MODE_NFP",
    "MODE_STPSI",
    "Manifest",
    "MixMode",
    "PctServer",
    "PctService",
    "PsiConfig",
    "PsiStats",
    "Query",
    "ServiceError",
    "SessionKey",
    "SuccinctTrie",
    "TrajectoryPoint",
    "attest_and_exchange",
    "build_chunked_dictionary",
    "build_trie",
    "decode_response",
    "dedup_sorted_keys",
    "encode_points",
    "encode_request",
    "evaluate",
    "exact_contact",
    "exact_contact_doe",
    "generate",
    "load_chunked_dictionary",
    "make_batch",
    "map_to_chunked_dictionary",
    "nfp_st_psi",
    "open_blob",
    "plan_chunk_count",
    "read_csv",
    "run_protocol",
    "save_chunked_dictionary",
    "seal",
    "st_psi",
    "st_psi_doe",
    "trajectory_hash",
    "write_csv",
    "__version__",
]
