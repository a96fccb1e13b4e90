// DOM shell around PhoneSession: a screen, a keypad, and one send button.
// Input is keypad-only by design; the screen element uses pre-formatting so
// gateway text is shown exactly as received.

import { PhoneSession } from "./phone.js";

const KEY_ROWS = [
  ["1", "2", "3"],
  ["4", "5", "6"],
  ["7", "8", "9"],
  ["*", "0", "#"],
];

// Letters a clinician can type via multi-tap on a real handset; the emulator
// exposes them as a second row bank toggled by the ABC key.
const ALPHA_ROWS = [
  ["A", "B", "C", "D", "E", "F", "G", "H", "I"],
  ["J", "K", "L", "M", "N", "O", "P", "Q", "R"],
  ["S", "T", "U", "V", "W", "X", "Y", "Z", "-"],
];

function button(label: string, onPress: () => void, className = "key"): HTMLButtonElement {
  const element = document.createElement("button");
  element.type = "button";
  element.textContent = label;
  element.className = className;
  element.addEventListener("click", onPress);
  return element;
}

export function mountPhone(root: HTMLElement, phone: PhoneSession): void {
  root.innerHTML = "";
  root.classList.add("phone");

  const status = document.createElement("div");
  status.className = "status";

  const screen = document.createElement("pre");
  screen.className = "screen";

  const inputLine = document.createElement("div");
  inputLine.className = "input-line";

  const keypad = document.createElement("div");
  keypad.className = "keypad";

  let alpha = false;
  const renderKeypad = () => {
    keypad.innerHTML = "";
    const rows = alpha ? ALPHA_ROWS : KEY_ROWS;
    for (const row of rows) {
      const rowElement = document.createElement("div");
      rowElement.className = "key-row";
      for (const key of row) {
        rowElement.appendChild(button(key, () => phone.press(key)));
      }
      keypad.appendChild(rowElement);
    }
    const controls = document.createElement("div");
    controls.className = "key-row controls";
    controls.appendChild(button(alpha ? "123" : "ABC", () => {
      alpha = !alpha;
      renderKeypad();
    }, "key mode"));
    controls.appendChild(button("⌫", () => phone.backspace(), "key"));
    controls.appendChild(button("Send", () => phone.send(), "key send"));
    keypad.appendChild(controls);
  };
  renderKeypad();

  const callRow = document.createElement("div");
  callRow.className = "key-row call-row";
  callRow.appendChild(button("Dial " + phone.shortcode, () => phone.dial(), "key dial"));
  callRow.appendChild(button("End", () => phone.hangUp(), "key hangup"));

  root.append(status, screen, inputLine, keypad, callRow);

  const render = () => {
    status.textContent = phone.offline
      ? "⚠ offline"
      : phone.state === "live"
        ? `in session · ${phone.msisdn}`
        : `idle · ${phone.msisdn}`;
    status.classList.toggle("offline", phone.offline);
    screen.textContent = phone.screen;
    inputLine.textContent = phone.state === "live" ? "> " + phone.buffer : "";
  };
  phone.onRender = render;
  render();
}
