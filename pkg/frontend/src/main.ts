/**
 * Entry point: read the connection details, connect, mount the UI.
 *
 * Configuration is limited to the server URL, the session id, and the
 * seat token, taken from query parameters or asked for with a form.
 */

import { SessionClient } from "./client.js";
import { mount } from "./dom.js";

function startSession(server: string, session: string, token: string): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const client = new SessionClient(server, session, token);
  mount(root, client);
  client.connect();
}

function showForm(): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.innerHTML = `
    <form class="connect">
      <label>Server <input name="server" value="ws://${location.host}" /></label>
      <label>Session <input name="session" /></label>
      <label>Token <input name="token" /></label>
      <button type="submit">Join</button>
    </form>`;
  const form = root.querySelector("form")!;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const params = new URLSearchParams({
      server: String(data.get("server") ?? ""),
      session: String(data.get("session") ?? ""),
      token: String(data.get("token") ?? ""),
    });
    location.search = params.toString();
  });
}

const params = new URLSearchParams(location.search);
const server = params.get("server");
const session = params.get("session");
const token = params.get("token");
if (server && session && token) {
  startSession(server, session, token);
} else {
  showForm();
}
