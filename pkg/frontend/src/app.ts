/** DOM wiring: holds the session state, drives the client, and re-renders
 * the transcript from accumulated server responses on every change. */

import { ApiClient } from "./api.js";
import {
  renderErrorBanner,
  renderImagePicker,
  renderTranscript,
  renderTurnCounter,
} from "./render.js";
import type { Message } from "./types.js";

export interface UiSessionState {
  sessionId: string | null;
  chosenImage: string | null;
  messages: Message[];
  degender: boolean;
  style: string;
  awaiting: boolean;
  error: string | null;
  images: string[];
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    chosenImage: null,
    messages: [],
    degender: false,
    style: "",
    awaiting: false,
    error: null,
    images: [],
  };
}

export class ChatApp {
  readonly state: UiSessionState = initialState();

  constructor(
    private readonly root: {
      querySelector(sel: string): { innerHTML: string } | null;
    },
    private readonly client: ApiClient,
  ) {}

  private setRegion(selector: string, html: string): void {
    const el = this.root.querySelector(selector);
    if (el) el.innerHTML = html;
  }

  render(): void {
    this.setRegion("#transcript", renderTranscript(this.state.messages));
    this.setRegion("#turns", renderTurnCounter(this.state.messages));
    this.setRegion(
      "#picker",
      renderImagePicker(this.state.images, this.state.chosenImage),
    );
    this.setRegion(
      "#banner",
      this.state.error === null ? "" : renderErrorBanner(this.state.error),
    );
  }

  async loadImages(): Promise<void> {
    try {
      const res = await this.client.images();
      this.state.images = res.images;
      this.state.error = null;
    } catch (err) {
      this.state.error = `could not reach server: ${String(err)}`;
    }
    this.render();
  }

  async startConversation(imageId: string | null): Promise<void> {
    this.state.chosenImage = imageId;
    this.state.messages = [];
    try {
      const res = await this.client.createSession({
        image_id: imageId ?? undefined,
        style: this.state.style || undefined,
        degender: this.state.degender,
      });
      this.state.sessionId = res.session_id;
      if (res.opening !== null) {
        this.state.messages.push({ speaker: "model", reply: res.opening });
      }
      this.state.error = null;
    } catch (err) {
      this.state.sessionId = null;
      this.state.error = `could not start session: ${String(err)}`;
    }
    this.render();
  }

  /** Rejects empty input and enforces one in-flight request per session. */
  async sendMessage(text: string): Promise<boolean> {
    const trimmed = text.trim();
    if (trimmed === "" || this.state.sessionId === null || this.state.awaiting) {
      return false;
    }
    this.state.awaiting = true;
    this.state.messages.push({ speaker: "human", text: trimmed });
    this.render();
    try {
      const reply = await this.client.chat(this.state.sessionId, trimmed);
      this.state.messages.push({ speaker: "model", reply });
      this.state.error = null;
    } catch (err) {
      this.state.error = `message failed: ${String(err)}`;
    } finally {
      this.state.awaiting = false;
    }
    this.render();
    return true;
  }
}

/** Binds the app to a live document; kept tiny so all logic stays testable. */
export function mount(doc: Document, baseUrl: string): ChatApp {
  const client = new ApiClient(baseUrl, (url, init) =>
    fetch(url, init as RequestInit),
  );
  const app = new ChatApp(doc, client);
  const input = doc.querySelector("#message") as HTMLInputElement;
  const send = doc.querySelector("#send") as HTMLButtonElement;
  const picker = doc.querySelector("#picker") as HTMLElement;
  const degender = doc.querySelector("#degender") as HTMLInputElement;
  const style = doc.querySelector("#style") as HTMLInputElement;

  const sync = () => {
    input.disabled = app.state.awaiting;
    send.disabled = app.state.awaiting;
  };

  send.addEventListener("click", async () => {
    const text = input.value;
    input.value = "";
    sync();
    await app.sendMessage(text);
    sync();
    input.focus();
  });
  input.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") send.click();
  });
  picker.addEventListener("change", (ev) => {
    const value = (ev.target as HTMLSelectElement).value;
    void app.startConversation(value === "" ? null : value);
  });
  degender.addEventListener("change", () => {
    app.state.degender = degender.checked;
  });
  style.addEventListener("change", () => {
    app.state.style = style.value;
  });

  void app.loadImages().then(() => app.startConversation(null));
  return app;
}
