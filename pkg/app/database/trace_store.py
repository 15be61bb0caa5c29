"""체인 trace, 방문 모형 trace, 요약 JSON 저장소"""
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.components.errors import DataFormatError
from app.components.kernels import ChainTrace
from app.components.varsel import Model, VSTrace
from app.utils.logging_utils import setupLogging

logger = setupLogging()

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


def _atomic_write(path: PathLike, text: str) -> Path:
    """임시 파일에 쓴 뒤 교체 (중간 실패 시 부분 파일 없음)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def chain_frame(states: np.ndarray, accepted: Sequence[bool]) -> pd.DataFrame:
    x = np.asarray(states)
    if x.ndim == 1:
        x = x[:, None]
    frame = pd.DataFrame(x, columns=[f"x{j + 1}" for j in range(x.shape[1])])
    frame.insert(0, "iteration", np.arange(1, x.shape[0] + 1))
    frame["accepted"] = np.asarray(accepted, dtype=int)
    return frame


def write_chain_csv(path: PathLike, trace: ChainTrace, float_format: str = FLOAT_FORMAT) -> Path:
    """헤더: iteration, x1..xd, accepted"""
    text = chain_frame(trace.states, trace.accepted).to_csv(index=False, float_format=float_format,
                                                           lineterminator="\n")
    written = _atomic_write(path, text)
    logger.info(f"💾 체인 CSV 저장: {written} ({trace.n}행)")
    return written


def read_chain_csv(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("trace 파일이 없습니다", str(path))
    frame = pd.read_csv(path)
    coords = [c for c in frame.columns if c.startswith("x") and c[1:].isdigit()]
    if not coords:
        raise DataFormatError("좌표 열(x1, x2, ...)이 없습니다", str(path))
    coords.sort(key=lambda c: int(c[1:]))
    states = frame[coords].to_numpy(dtype=float)
    accepted = frame["accepted"].to_numpy(dtype=bool) if "accepted" in frame.columns else None
    return states, accepted


def format_model(model: Sequence[int]) -> str:
    """0-기반 인덱스를 공백 구분 1-기반 문자열로"""
    return " ".join(str(int(j) + 1) for j in model)


def parse_model(text: Any) -> Model:
    if text is None or (isinstance(text, float) and np.isnan(text)):
        return ()
    tokens = str(text).split()
    try:
        return tuple(sorted(int(t) - 1 for t in tokens))
    except ValueError:
        raise DataFormatError(f"모형 인덱스를 읽을 수 없습니다: {text!r}")


def write_model_trace(path: PathLike, trace: VSTrace, float_format: str = FLOAT_FORMAT) -> Path:
    """헤더: iteration, log_post, accepted, size, model (1-기반 인덱스)"""
    frame = pd.DataFrame({
        "iteration": np.arange(1, len(trace.models) + 1),
        "log_post": trace.log_posts,
        "accepted": trace.accepted.astype(int),
        "size": [len(g) for g in trace.models],
        "model": [format_model(g) for g in trace.models],
    })
    written = _atomic_write(path, frame.to_csv(index=False, float_format=float_format, lineterminator="\n"))
    logger.info(f"💾 모형 trace 저장: {written} ({len(trace.models)}행)")
    return written


def read_model_trace(path: PathLike) -> Tuple[List[Model], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("모형 trace 파일이 없습니다", str(path))
    frame = pd.read_csv(path, dtype={"model": str}, keep_default_na=False)
    return [parse_model(t) for t in frame["model"]], frame["log_post"].to_numpy(dtype=float)


def to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def write_summary_json(path: PathLike, summary: Dict[str, Any]) -> Path:
    """키 정렬 JSON (같은 입력이면 같은 바이트)"""
    text = json.dumps(to_jsonable(summary), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    return _atomic_write(path, text)


def write_text(path: PathLike, text: str) -> Path:
    return _atomic_write(path, text)


def read_summary_json(path: PathLike) -> Optional[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return None
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
