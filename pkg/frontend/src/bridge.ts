// WebSocket bridge client. The socket is injected behind a narrow
// browser-WebSocket-shaped interface so tests can supply a Node transport
// or a scripted fake.

import { BridgeMessage, UssdPdu, decodeFromGateway, encodeToGateway } from "./pdu.js";

export interface SocketLike {
  onopen: (() => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export class PhoneBridge {
  private socket: SocketLike | null = null;
  private up = false;

  onPdu: ((pdu: UssdPdu) => void) | null = null;
  onDown: (() => void) | null = null;

  constructor(private readonly url: string, private readonly factory: SocketFactory) {}

  get connected(): boolean {
    return this.up;
  }

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      let settled = false;
      let socket: SocketLike;
      try {
        socket = this.factory(this.url);
      } catch (err) {
        reject(err instanceof Error ? err : new Error(String(err)));
        return;
      }
      socket.onopen = () => {
        this.up = true;
        settled = true;
        resolve();
      };
      socket.onmessage = (event) => {
        let message: BridgeMessage;
        try {
          message = decodeFromGateway(String(event.data));
        } catch {
          return; // not a bridge document; ignore
        }
        this.onPdu?.(message.pdu);
      };
      const fail = () => {
        this.up = false;
        if (!settled) {
          settled = true;
          reject(new Error("bridge connection failed"));
          return;
        }
        this.onDown?.();
      };
      socket.onclose = fail;
      socket.onerror = fail;
      this.socket = socket;
    });
  }

  sendPdu(pdu: UssdPdu): void {
    if (!this.up || this.socket === null) {
      throw new Error("bridge is down");
    }
    this.socket.send(encodeToGateway(pdu));
  }

  close(): void {
    this.up = false;
    this.socket?.close();
    this.socket = null;
  }
}
