import { describe, expect, it } from "vitest";

import { PhoneBridge, SocketLike } from "../src/bridge.js";
import { OFFLINE_TEXT, PhoneSession } from "../src/phone.js";
import { UssdPdu } from "../src/pdu.js";

/** Scripted gateway: replies to each PDU from a queue of responders. */
class FakeSocket implements SocketLike {
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  sent: UssdPdu[] = [];
  closed = false;

  constructor(private readonly respond: (pdu: UssdPdu) => UssdPdu | null) {}

  open(): void {
    this.onopen?.();
  }

  send(data: string): void {
    const pdu = JSON.parse(data).pdu as UssdPdu;
    this.sent.push(pdu);
    const reply = this.respond(pdu);
    if (reply !== null) {
      this.onmessage?.({ data: JSON.stringify({ direction: "TO_PHONE", pdu: reply }) });
    }
  }

  close(): void {
    this.closed = true;
  }

  drop(): void {
    this.onclose?.();
  }
}

function scriptedGateway(screens: Record<string, string>) {
  let step = 0;
  return (pdu: UssdPdu): UssdPdu => {
    const text = screens[String(step)] ?? "?";
    step += 1;
    const end = text.startsWith("END:");
    return {
      session_id: pdu.session_id,
      msisdn: pdu.msisdn,
      kind: end ? "END" : "CONTINUE",
      text: end ? text.slice(4) : text,
    };
  };
}

async function livePhone(screens: Record<string, string>) {
  const socket = new FakeSocket(scriptedGateway(screens));
  const bridge = new PhoneBridge("ws://fake/bridge", () => socket);
  const connected = bridge.connect();
  socket.open();
  await connected;
  const phone = new PhoneSession(bridge, {
    msisdn: "+256700000001",
    sessionIds: () => "fixed-session",
  });
  return { socket, bridge, phone };
}

describe("phone session", () => {
  it("dials the shortcode and renders the first screen verbatim", async () => {
    const { socket, phone } = await livePhone({ "0": "Enter PIN:" });
    const seen: string[] = [];
    phone.onScreen = (text) => seen.push(text);
    phone.dial();
    expect(socket.sent[0]).toEqual({
      session_id: "fixed-session",
      msisdn: "+256700000001",
      kind: "BEGIN",
      text: "*384#",
    });
    expect(phone.screen).toBe("Enter PIN:");
    expect(seen).toEqual(["Enter PIN:"]);
    expect(phone.state).toBe("live");
  });

  it("accumulates keys and sends them as one CONTINUE", async () => {
    const { socket, phone } = await livePhone({ "0": "Enter PIN:", "1": "Main menu\n1 X\n0 Back" });
    phone.dial();
    for (const key of ["8", "3", "4", "1", "2"]) phone.press(key);
    expect(phone.buffer).toBe("83412");
    phone.backspace();
    phone.press("2");
    phone.send();
    expect(socket.sent[1]).toMatchObject({ kind: "CONTINUE", text: "83412" });
    expect(phone.screen).toBe("Main menu\n1 X\n0 Back");
    expect(phone.buffer).toBe("");
  });

  it("returns to idle on END, keeping the final text on screen", async () => {
    const { phone } = await livePhone({ "0": "Enter PIN:", "1": "END:Refill requested." });
    phone.dial();
    phone.press("1");
    phone.send();
    expect(phone.screen).toBe("Refill requested.");
    expect(phone.state).toBe("idle");
    // Keys without a session are ignored.
    phone.press("5");
    phone.send();
    expect(phone.buffer).toBe("");
    expect(phone.screen).toBe("Refill requested.");
  });

  it("never rewraps or truncates screen text", async () => {
    const long = "History P-1\n" + Array.from({ length: 6 }, (_, i) => `${i + 1} 2026-02-14 OBS BP=120/80`).join("\n");
    const { phone } = await livePhone({ "0": long });
    phone.dial();
    expect(phone.screen).toBe(long);
  });

  it("shows the offline indicator when dialing with the bridge down", () => {
    const socket = new FakeSocket(() => null);
    const bridge = new PhoneBridge("ws://fake/bridge", () => socket);
    const phone = new PhoneSession(bridge, { msisdn: "+1" }); // never connected
    phone.dial();
    expect(phone.offline).toBe(true);
    expect(phone.screen).toBe(OFFLINE_TEXT);
    expect(socket.sent).toHaveLength(0);
  });

  it("flags offline when the bridge drops mid-session", async () => {
    const { socket, phone } = await livePhone({ "0": "Enter PIN:" });
    phone.dial();
    socket.drop();
    expect(phone.offline).toBe(true);
    expect(phone.state).toBe("idle");
    expect(phone.screen).toBe(OFFLINE_TEXT);
  });

  it("ignores responses for other sessions", async () => {
    const { socket, phone } = await livePhone({ "0": "Enter PIN:" });
    phone.dial();
    socket.onmessage?.({
      data: JSON.stringify({
        direction: "TO_PHONE",
        pdu: { session_id: "someone-else", msisdn: "+1", kind: "END", text: "nope" },
      }),
    });
    expect(phone.screen).toBe("Enter PIN:");
    expect(phone.state).toBe("live");
  });

  it("holds no clinical state: a fresh session starts clean", async () => {
    const { phone } = await livePhone({ "0": "Enter PIN:", "1": "END:Bye.", "2": "Enter PIN:" });
    phone.dial();
    phone.press("0");
    phone.send();
    expect(phone.state).toBe("idle");
    phone.dial();
    expect(phone.screen).toBe("Enter PIN:");
    expect(phone.buffer).toBe("");
  });
});
