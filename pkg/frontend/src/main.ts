/** DOM wiring for the photofit studio. Session state persists in browser
 * storage only; all numeric work happens server-side. */

import { ServiceClient, ServiceError } from "./api.js";
import { PARAM_GROUPS, type ParamGroup } from "./params.js";
import { StudioSession } from "./session.js";
import { MeshViewer } from "./viewer.js";

const SLIDERS_PER_GROUP: Record<ParamGroup, number> = {
  beta: 8,
  psi: 4,
  theta: 6,
  delta: 0,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function download(name: string, content: string, type: string): void {
  const blob = new Blob([content], { type });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

function showBanner(message: string, retry?: () => void): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message;
  banner.hidden = false;
  if (retry) {
    const btn = document.createElement("button");
    btn.textContent = "retry";
    btn.onclick = () => {
      banner.hidden = true;
      retry();
    };
    banner.appendChild(btn);
  }
}

function main(): void {
  const baseUrlInput = el<HTMLInputElement>("service-url");
  baseUrlInput.value =
    localStorage.getItem("faceforge.serviceUrl") ?? "http://localhost:8080";

  let session = new StudioSession(new ServiceClient(baseUrlInput.value));
  const viewer = new MeshViewer(el("viewport"));

  baseUrlInput.onchange = () => {
    localStorage.setItem("faceforge.serviceUrl", baseUrlInput.value);
    session = new StudioSession(new ServiceClient(baseUrlInput.value));
  };

  const readout = el<HTMLPreElement>("readout");
  const updateReadout = () => {
    if (!session.regressed) return;
    const p = session.effectiveParams();
    readout.textContent = PARAM_GROUPS.map(
      (g) => `${g}: [${p[g].map((v) => v.toFixed(3)).join(", ")}]`,
    ).join("\n");
  };

  const sliderPanel = el<HTMLDivElement>("sliders");
  const buildSliders = () => {
    sliderPanel.innerHTML = "";
    for (const group of PARAM_GROUPS) {
      for (let i = 0; i < SLIDERS_PER_GROUP[group]; i++) {
        const label = document.createElement("label");
        label.textContent = `${group}[${i}]`;
        const input = document.createElement("input");
        input.type = "range";
        input.min = "-5";
        input.max = "5";
        input.step = "0.1";
        input.value = String(session.sliderValue(group, i));
        let timer: ReturnType<typeof setTimeout> | undefined;
        input.oninput = () => {
          clearTimeout(timer);
          timer = setTimeout(async () => {
            const mesh = await session.adjustSlider(group, i, Number(input.value));
            if (mesh) viewer.showMesh(mesh);
            updateReadout();
          }, 120);
        };
        label.appendChild(input);
        sliderPanel.appendChild(label);
      }
    }
  };

  el<HTMLButtonElement>("submit").onclick = async () => {
    const text = el<HTMLInputElement>("prompt").value.trim();
    if (!text) return;
    try {
      const result = await session.submitPrompt(text);
      viewer.showMesh(result.mesh);
      buildSliders();
      updateReadout();
      el("status").textContent = result.unchanged ? "unchanged" : "";
    } catch (err) {
      if (err instanceof ServiceError && err.isEmbedderUnavailable) {
        showBanner(`embedder unavailable: ${err.detail}`, () =>
          el<HTMLButtonElement>("submit").click(),
        );
      } else {
        showBanner(String(err));
      }
    }
  };

  el<HTMLButtonElement>("reset-sliders").onclick = async () => {
    const mesh = await session.resetSliders();
    if (mesh) viewer.showMesh(mesh);
    buildSliders();
    updateReadout();
  };

  el<HTMLButtonElement>("pin-a").onclick = () => session.pinCurrentA();
  el<HTMLButtonElement>("pin-b").onclick = () => session.pinCurrentB();
  el<HTMLInputElement>("lerp").oninput = async (ev) => {
    const t = Number((ev.target as HTMLInputElement).value);
    try {
      const { mesh } = await session.interpolate(t);
      if (mesh) viewer.showMesh(mesh);
    } catch (err) {
      showBanner(String(err));
    }
  };

  el<HTMLButtonElement>("export").onclick = async () => {
    try {
      const bundle = await session.exportSession();
      download(`${bundle.baseName}.obj`, bundle.objText, "model/obj");
      download(`${bundle.baseName}.json`, bundle.paramsJson, "application/json");
    } catch (err) {
      showBanner(String(err));
    }
  };
}

main();
