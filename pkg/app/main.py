from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.router import experiment_router as experiments
from app.utils.logging_utils import safePrint, setupLogging
from app.utils.settings import getSettings

logger = setupLogging()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """애플리케이션 생명주기 관리"""
    logger.info("🚀 FastAPI 애플리케이션 시작")
    yield
    logger.info("🛑 FastAPI 애플리케이션 종료")


app = FastAPI(
    title="Geometric MCMC API",
    description="기하 정보 MH 샘플러 실험 서버",
    version="1.0.0",
    lifespan=lifespan
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(experiments.router, prefix="/api/v1/experiments", tags=["실험"])


@app.get("/")
def root():
    return {
        "message": "🚀 기하 MCMC 실험 서버가 실행되고 있습니다",
        "available_endpoints": {
            "experiments": "/api/v1/experiments"
        },
        "docs": "/docs"
    }


@app.get("/health")
def health():
    return {"status": "healthy", "message": "모든 서비스가 정상 작동 중입니다"}


if __name__ == "__main__":
    settings = getSettings()
    safePrint("🚀 실험 서버 시작...")
    uvicorn.run(app, host=settings.server.host, port=settings.server.port)
