from typing import List, Optional

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """splitmix64 한 단계 출력"""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def deriveSeeds(masterSeed: int, count: int) -> List[int]:
    """마스터 시드에서 복제 실행별 시드 유도: seed_i = splitmix64(master + i·γ)"""
    if count < 0:
        raise ValueError("count는 0 이상이어야 합니다")
    base = int(masterSeed) & MASK64
    return [splitmix64((base + i * 0x9E3779B97F4A7C15) & MASK64) for i in range(count)]


def makeRng(seed: Optional[int]) -> np.random.Generator:
    # None이면 OS 엔트로피 (재현 불가)
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(int(seed) & MASK64)
