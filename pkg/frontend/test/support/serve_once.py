"""Start a one-session service for the client integration test.

Creates a session with one human seat and a bot population, binds an
ephemeral port, prints one JSON line with the connection details, then
serves until killed.
"""

import json
import sys
import threading
import time

import uvicorn

from karmalab.core import preset
from karmalab.server import SessionStore, create_app


def main() -> None:
    preset_name = sys.argv[1] if len(sys.argv) > 1 else "low-binary"
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1
    bots = sys.argv[3] if len(sys.argv) > 3 else "uniform:19"

    store = SessionStore()
    session = store.create_session(preset(preset_name, seed=seed), bots=bots)
    token = session.human_seats()[0].token

    server = uvicorn.Server(uvicorn.Config(
        create_app(store), host="127.0.0.1", port=0, log_level="error",
    ))

    def announce() -> None:
        while not server.started:
            time.sleep(0.01)
        port = server.servers[0].sockets[0].getsockname()[1]
        print(json.dumps({
            "port": port, "session": session.id, "token": token,
        }), flush=True)

    threading.Thread(target=announce, daemon=True).start()
    server.run()


if __name__ == "__main__":
    main()
