// USSD transport documents. The pdu schema is bit-exact the gateway's
// transport format; BridgeMessage wraps it with a direction, nothing more.

export type PduKind = "BEGIN" | "CONTINUE" | "END" | "ABORT";

export interface UssdPdu {
  session_id: string;
  msisdn: string;
  kind: PduKind;
  text: string;
}

export interface BridgeMessage {
  direction: "TO_GATEWAY" | "TO_PHONE";
  pdu: UssdPdu;
}

export const MAX_TEXT = 182;

const KINDS: readonly string[] = ["BEGIN", "CONTINUE", "END", "ABORT"];

export function encodeToGateway(pdu: UssdPdu): string {
  return JSON.stringify({ direction: "TO_GATEWAY", pdu });
}

export function decodeFromGateway(raw: string): BridgeMessage {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    throw new Error("bridge message is not JSON");
  }
  if (typeof doc !== "object" || doc === null) {
    throw new Error("bridge message must be an object");
  }
  const message = doc as Record<string, unknown>;
  if (message.direction !== "TO_PHONE") {
    throw new Error(`unexpected direction ${String(message.direction)}`);
  }
  const pdu = message.pdu as Record<string, unknown> | undefined;
  if (
    pdu === undefined ||
    typeof pdu.session_id !== "string" ||
    typeof pdu.msisdn !== "string" ||
    typeof pdu.kind !== "string" ||
    typeof pdu.text !== "string" ||
    !KINDS.includes(pdu.kind)
  ) {
    throw new Error("malformed pdu document");
  }
  return {
    direction: "TO_PHONE",
    pdu: {
      session_id: pdu.session_id,
      msisdn: pdu.msisdn,
      kind: pdu.kind as PduKind,
      text: pdu.text,
    },
  };
}
