// The feature-phone session: dialing, keyed-but-unsent input, and the
// screen. The screen is always the gateway's response text verbatim; this
// module holds no clinical state, so losing it loses only the dialogue.

import { PhoneBridge } from "./bridge.js";
import { UssdPdu } from "./pdu.js";

export type PhoneState = "idle" | "live";

export const OFFLINE_TEXT = "[offline] No network. Check the gateway and dial again.";

function randomSessionId(): string {
  const bytes = new Uint8Array(8);
  if (typeof crypto !== "undefined" && "getRandomValues" in crypto) {
    crypto.getRandomValues(bytes);
  } else {
    for (let i = 0; i < bytes.length; i++) bytes[i] = Math.floor(Math.random() * 256);
  }
  return "ph-" + Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export interface PhoneOptions {
  msisdn: string;
  shortcode?: string;
  sessionIds?: () => string;
}

export class PhoneSession {
  readonly msisdn: string;
  readonly shortcode: string;

  state: PhoneState = "idle";
  screen = "";
  buffer = "";
  offline = false;

  /** Fired with the gateway text each time a response lands. */
  onScreen: ((text: string) => void) | null = null;
  /** Fired on any visible change (screen, buffer, state). */
  onRender: (() => void) | null = null;

  private sessionId = "";
  private readonly nextSessionId: () => string;

  constructor(private readonly bridge: PhoneBridge, options: PhoneOptions) {
    this.msisdn = options.msisdn;
    this.shortcode = options.shortcode ?? "*384#";
    this.nextSessionId = options.sessionIds ?? randomSessionId;
    bridge.onPdu = (pdu) => this.receive(pdu);
    bridge.onDown = () => {
      this.offline = true;
      if (this.state === "live") {
        this.state = "idle";
        this.screen = OFFLINE_TEXT;
      }
      this.render();
    };
  }

  /** Open a dialogue by dialing the service code. */
  dial(shortcode?: string): void {
    if (!this.bridge.connected) {
      this.offline = true;
      this.screen = OFFLINE_TEXT;
      this.render();
      return;
    }
    this.offline = false;
    this.sessionId = this.nextSessionId();
    this.state = "live";
    this.buffer = "";
    this.screen = "Dialing " + (shortcode ?? this.shortcode) + " ...";
    this.transmit("BEGIN", shortcode ?? this.shortcode);
    this.render();
  }

  /** Keypad digit (or * / #); ignored without a live session. */
  press(key: string): void {
    if (this.state !== "live") return;
    this.buffer += key;
    this.render();
  }

  backspace(): void {
    if (this.state !== "live") return;
    this.buffer = this.buffer.slice(0, -1);
    this.render();
  }

  /** Send the accumulated input as one CONTINUE. */
  send(): void {
    if (this.state !== "live") return;
    const text = this.buffer;
    this.buffer = "";
    this.transmit("CONTINUE", text);
    this.render();
  }

  /** Hang up: tell the gateway and return to idle. */
  hangUp(): void {
    if (this.state !== "live") return;
    this.transmit("ABORT", "");
    this.state = "idle";
    this.buffer = "";
    this.render();
  }

  private transmit(kind: UssdPdu["kind"], text: string): void {
    try {
      this.bridge.sendPdu({
        session_id: this.sessionId,
        msisdn: this.msisdn,
        kind,
        text,
      });
    } catch {
      this.offline = true;
      this.state = "idle";
      this.screen = OFFLINE_TEXT;
    }
  }

  private receive(pdu: UssdPdu): void {
    if (pdu.session_id !== this.sessionId) return;
    this.screen = pdu.text; // verbatim, never rewrapped or truncated
    if (pdu.kind === "END" || pdu.kind === "ABORT") {
      this.state = "idle";
      this.buffer = "";
    }
    this.onScreen?.(pdu.text);
    this.render();
  }

  private render(): void {
    this.onRender?.();
  }
}
