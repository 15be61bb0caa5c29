"""설계 행렬/반응 입력: 구분자 텍스트, 로지스틱 CSV, 희소 이진 열 형식

희소 이진 형식 (모두 little-endian):
    magic     8 bytes  b"GMCSPC01"
    m, p, nnz u64 × 3
    flags     u64      bit0 = 반응 블록 포함
    offsets   u64 × (p + 1)   열 시작 위치 (CSC indptr)
    rows      u32 × nnz       행 인덱스 (0-기반)
    values    f64 × nnz
    response  f64 × m         flags bit0 일 때만
"""
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from app.components.errors import DataFormatError, DimensionMismatchError
from app.utils.logging_utils import setupLogging

logger = setupLogging()

PathLike = Union[str, Path]
SPARSE_MAGIC = b"GMCSPC01"
_U64 = np.dtype('<u8')
_U32 = np.dtype('<u4')
_F64 = np.dtype('<f8')


def _require(path: PathLike) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("데이터 파일이 없습니다", str(path))
    return path


def load_delimited(path: PathLike, response: str = "z",
                   sep: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """헤더가 있는 구분자 텍스트. response 열을 반응으로, 나머지를 설계로"""
    path = _require(path)
    frame = pd.read_csv(path, sep=sep, engine='python' if sep is None else 'c')
    if response not in frame.columns:
        raise DataFormatError(f"반응 열 '{response}'이 없습니다 (열: {list(frame.columns)[:10]})", str(path))
    predictors = [c for c in frame.columns if c != response]
    if not predictors:
        raise DataFormatError("설계 열이 없습니다", str(path))
    try:
        W = frame[predictors].to_numpy(dtype=float)
        z = frame[response].to_numpy(dtype=float)
    except ValueError as e:
        raise DataFormatError(f"숫자가 아닌 값이 있습니다: {e}", str(path))
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(z))):
        raise DataFormatError("결측 또는 비유한 값이 있습니다", str(path))
    logger.info(f"📂 설계 로드: {path.name} (m={W.shape[0]}, p={W.shape[1]})")
    return W, z, predictors


def load_logistic_csv(path: PathLike, response: str = "z", intercept: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """로지스틱 자료. 반응은 0/1, intercept=True 면 1 열을 앞에 추가"""
    W, z, _ = load_delimited(path, response)
    if not np.all((z == 0.0) | (z == 1.0)):
        raise DataFormatError("로지스틱 반응은 0 또는 1이어야 합니다", str(path))
    if intercept:
        W = np.column_stack([np.ones(W.shape[0]), W])
    return W, z.astype(float)


def write_sparse_design(path: PathLike, W, z: Optional[np.ndarray] = None) -> Path:
    csc = sp.csc_matrix(W, dtype=float)
    csc.sort_indices()
    m, p = csc.shape
    if z is not None and np.asarray(z).size != m:
        raise DimensionMismatchError(f"반응 길이 {np.asarray(z).size} != 행 수 {m}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(SPARSE_MAGIC)
        f.write(np.array([m, p, csc.nnz, 1 if z is not None else 0], dtype=_U64).tobytes())
        f.write(csc.indptr.astype(_U64).tobytes())
        f.write(csc.indices.astype(_U32).tobytes())
        f.write(csc.data.astype(_F64).tobytes())
        if z is not None:
            f.write(np.asarray(z, dtype=_F64).tobytes())
    return path


def read_sparse_design(path: PathLike) -> Tuple[sp.csc_matrix, Optional[np.ndarray]]:
    path = _require(path)
    raw = path.read_bytes()
    if raw[:len(SPARSE_MAGIC)] != SPARSE_MAGIC:
        raise DataFormatError("희소 설계 magic header가 아닙니다", str(path))
    pos = len(SPARSE_MAGIC)

    def take(dtype: np.dtype, count: int) -> np.ndarray:
        nonlocal pos
        end = pos + dtype.itemsize * count
        if end > len(raw):
            raise DataFormatError("파일이 예상보다 짧습니다", str(path))
        block = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos = end
        return block

    m, p, nnz, flags = (int(v) for v in take(_U64, 4))
    offsets = take(_U64, p + 1).astype(np.int64)
    rows = take(_U32, nnz).astype(np.int64)
    values = take(_F64, nnz).copy()
    z = take(_F64, m).copy() if flags & 1 else None
    if pos != len(raw):
        raise DataFormatError(f"파일 끝에 {len(raw) - pos} 바이트가 남습니다", str(path))
    if offsets[0] != 0 or offsets[-1] != nnz or np.any(np.diff(offsets) < 0):
        raise DataFormatError("열 offset이 올바르지 않습니다", str(path))
    if nnz and rows.max() >= m:
        raise DataFormatError("행 인덱스가 범위를 벗어납니다", str(path))
    logger.info(f"📂 희소 설계 로드: {path.name} (m={m}, p={p}, nnz={nnz})")
    return sp.csc_matrix((values, rows, offsets), shape=(m, p)), z
