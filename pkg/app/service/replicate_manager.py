import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence

from app.utils.logging_utils import setupLogging
from app.utils.seed_utils import deriveSeeds

logger = setupLogging()


class ReplicateManager:
    """복제 실행 관리자 - 동시 실행 수를 제한한 비동기 처리"""

    def __init__(self, max_workers: int = 4):
        if max_workers < 1:
            raise ValueError("max_workers는 1 이상이어야 합니다")
        self._max_workers = max_workers
        self._semaphore: Optional[asyncio.Semaphore] = None
        self._lock: Optional[asyncio.Lock] = None
        self._replicates: Dict[str, Dict[str, Any]] = {}
        self._current = 0
        self._peak = 0

    @property
    def peak_concurrency(self) -> int:
        return self._peak

    def status(self) -> Dict[str, str]:
        return {key: entry["status"] for key, entry in self._replicates.items()}

    @property
    def seeds(self) -> List[int]:
        """마지막 실행의 복제별 seed (복제 번호 순)"""
        return [self._replicates[key]["seed"] for key in sorted(self._replicates)]

    @staticmethod
    def replicate_seeds(master_seed: int, count: int) -> List[int]:
        """복제 1개면 master seed 그대로, 여러 개면 splitmix64 파생 seed"""
        if count < 1:
            raise ValueError(f"복제 수는 1 이상이어야 합니다: {count}")
        return [master_seed] if count == 1 else deriveSeeds(master_seed, count)

    async def _run_one(self, index: int, seed: int, fn: Callable[[int], Any],
                       executor: ThreadPoolExecutor) -> Any:
        replicateId = f"REPLICATE_{index + 1:03d}"
        self._replicates[replicateId] = {"seed": seed, "status": "pending", "started": None}
        async with self._semaphore:
            async with self._lock:
                self._current += 1
                self._peak = max(self._peak, self._current)
            self._replicates[replicateId].update(status="running", started=time.time())
            try:
                loop = asyncio.get_running_loop()
                result = await loop.run_in_executor(executor, fn, seed)
                self._replicates[replicateId]["status"] = "completed"
                return result
            except Exception as e:
                self._replicates[replicateId]["status"] = "failed"
                logger.error(f"❌ {replicateId} (seed={seed}) 실패: {e}")
                raise
            finally:
                async with self._lock:
                    self._current -= 1

    async def run(self, fn: Callable[[int], Any], seeds: Sequence[int]) -> List[Any]:
        """seeds 순서대로 결과 반환 (완료 순서와 무관)"""
        logger.info(f"🔁 복제 실행 {len(seeds)}개 시작 (동시 {self._max_workers})")
        # 실행 중인 이벤트 루프에 묶어 생성
        self._semaphore = asyncio.Semaphore(self._max_workers)
        self._lock = asyncio.Lock()
        self._replicates = {}
        self._current = 0
        self._peak = 0
        with ThreadPoolExecutor(max_workers=self._max_workers) as executor:
            results = await asyncio.gather(*(self._run_one(i, s, fn, executor) for i, s in enumerate(seeds)))
        logger.info(f"✅ 복제 실행 {len(seeds)}개 완료")
        return list(results)

    async def run_derived(self, fn: Callable[[int], Any], master_seed: int, count: int) -> List[Any]:
        return await self.run(fn, self.replicate_seeds(master_seed, count))
