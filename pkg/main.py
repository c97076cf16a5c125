from fastapi import FastAPI, Depends, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.security import HTTPBasic, HTTPBasicCredentials
from fastapi.middleware.cors import CORSMiddleware
from fastapi.openapi.docs import get_swagger_ui_html, get_redoc_html
from contextlib import asynccontextmanager
import logging
import secrets

from core.database import init_db
from core.config import settings
from core.errors import AqaError
from core.log import configure_logging
from routes import score_route, prediction_route

logger = logging.getLogger(__name__)

security = HTTPBasic()
def basic_auth(credentials: HTTPBasicCredentials = Depends(security)):
    correct_username = secrets.compare_digest(credentials.username, settings.API_USERNAME)
    correct_password = secrets.compare_digest(credentials.password, settings.API_PASSWORD)
    if not (correct_username and correct_password):
        raise HTTPException(status_code=401, detail="Invalid credentials", headers={"WWW-Authenticate": "Basic"})

@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging(settings.LOG_LEVEL)
    init_db()
    yield

app = FastAPI(title="Action Quality Assessment API", lifespan=lifespan, docs_url=None, redoc_url=None)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"]
)

@app.exception_handler(AqaError)
async def aqa_error_handler(request: Request, exc: AqaError):
    logger.warning("%s %s failed: %s", request.method, request.url.path, exc)
    return JSONResponse(status_code=exc.http_status, content={"detail": str(exc), "error": type(exc).__name__})

app.include_router(score_route.router, dependencies=[Depends(basic_auth)])
app.include_router(prediction_route.router, dependencies=[Depends(basic_auth)])

# Root endpoint
@app.get("/")
def read_root(credentials: HTTPBasicCredentials = Depends(security)):
    basic_auth(credentials)
    return {"message": "Action Quality Assessment API", "run_dir": settings.RUN_DIR}

@app.get("/docs", include_in_schema=False)
def custom_swagger_ui(credentials: HTTPBasicCredentials = Depends(security)):
    basic_auth(credentials)
    return get_swagger_ui_html(openapi_url="/openapi.json", title=app.title)

@app.get("/redoc", include_in_schema=False)
def custom_redoc(credentials: HTTPBasicCredentials = Depends(security)):
    basic_auth(credentials)
    return get_redoc_html(openapi_url="/openapi.json", title=app.title)


def main(host: str = "0.0.0.0", port: int = 8000):
    import uvicorn
    uvicorn.run(app, host=host, port=port)

if __name__ == "__main__":
    main()
