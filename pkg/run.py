import os
import subprocess
import sys


def run_backend():
    """Run the projection API using uvicorn."""
    root = os.path.dirname(os.path.abspath(__file__))
    host = os.getenv("BACKEND_HOST", "127.0.0.1")
    port = os.getenv("BACKEND_PORT", "8000")
    cmd = [sys.executable, "-m", "uvicorn", "backend.app.main:app", "--reload", "--host", host, "--port", port]
    return subprocess.Popen(cmd, cwd=root)


def main():
    """Run the projection API until interrupted."""
    print("Starting Sonarscale Projection API...")
    backend_process = run_backend()
    try:
        backend_process.wait()
    except KeyboardInterrupt:
        print("\nShutting down server...")
    finally:
        if backend_process.poll() is None:
            backend_process.terminate()
        print("Server stopped.")


if __name__ == "__main__":
    main()
