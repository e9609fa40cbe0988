import asyncio
import logging
from contextlib import asynccontextmanager

# FastAPI
from fastapi import FastAPI

# Import routes
from routes import api
# Import options
from util.options import Options
from util.scheduler import schedule_loop

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    http = Options.get("http") or {}
    loop_task = None

    if http.get("scheduler", False):
        config = Options.run_config()
        loop_task = asyncio.create_task(schedule_loop(config))
        logger.info("Daily trigger loop started (%s %s)", config.trigger_time, config.timezone)

    yield

    if loop_task is not None:
        loop_task.cancel()
        try:
            await loop_task
        except asyncio.CancelledError:
            pass


# Initiate FastAPI.
app = FastAPI(title="The Daily Dose", lifespan=lifespan)

# Import endpoints from ./routes
app.include_router(api.router)


if __name__ == "__main__":
    import uvicorn

    http = Options.get("http") or {}
    uvicorn.run(app, host=http.get("host", "0.0.0.0"), port=http.get("port", 8000))
