// Entry point: connect the bridge and mount the phone.
// Query parameters: ?gateway=ws://host:port/bridge&msisdn=+256700000001

import { PhoneBridge, SocketLike } from "./bridge.js";
import { PhoneSession, OFFLINE_TEXT } from "./phone.js";
import { mountPhone } from "./ui.js";

function browserSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const like: SocketLike = {
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
    send: (data) => ws.send(data),
    close: () => ws.close(),
  };
  ws.onopen = () => like.onopen?.();
  ws.onmessage = (event) => like.onmessage?.({ data: event.data });
  ws.onclose = () => like.onclose?.();
  ws.onerror = () => like.onerror?.();
  return like;
}

const params = new URLSearchParams(window.location.search);
const gatewayUrl =
  params.get("gateway") ?? `ws://${window.location.hostname || "localhost"}:8701/bridge`;
const msisdn = params.get("msisdn") ?? "+256700000001";

const bridge = new PhoneBridge(gatewayUrl, browserSocket);
const phone = new PhoneSession(bridge, { msisdn });

const root = document.getElementById("phone");
if (root === null) {
  throw new Error("missing #phone mount point");
}
mountPhone(root, phone);

bridge.connect().catch(() => {
  phone.offline = true;
  phone.screen = OFFLINE_TEXT;
  phone.onRender?.();
});
