import { fetchBalloon, postAccept } from "./api.js";
import { depthToRgba } from "./colormap.js";
import { Debouncer, SingleFlight } from "./debounce.js";
import {
  acceptFailed,
  acceptFinished,
  acceptStarted,
  canAccept,
  displayedLabel,
  initialState,
  requestStarted,
  responseArrived,
  responseFailed,
  sliderMoved,
  TunerViewState,
} from "./state.js";

const KAPPA_MIN = 0.5;
const KAPPA_MAX = 1000;
const DEBOUNCE_MS = 150;

const slider = document.getElementById("kappa-slider") as HTMLInputElement;
const kappaValue = document.getElementById("kappa-value") as HTMLSpanElement;
const previewLabel = document.getElementById("preview-label") as HTMLSpanElement;
const shadedImg = document.getElementById("shaded-preview") as HTMLImageElement;
const depthCanvas = document.getElementById("depth-canvas") as HTMLCanvasElement;
const acceptButton = document.getElementById("accept-button") as HTMLButtonElement;
const acceptedLabel = document.getElementById("accepted-label") as HTMLSpanElement;
const banner = document.getElementById("error-banner") as HTMLDivElement;
const spinner = document.getElementById("pending") as HTMLSpanElement;

let state: TunerViewState = initialState(sliderToKappa(Number(slider.value)));
let generation = 0;

// logarithmic slider: three decades of kappa on a linear control
function sliderToKappa(position: number): number {
  const t = position / 1000;
  return KAPPA_MIN * Math.pow(KAPPA_MAX / KAPPA_MIN, t);
}

function render(): void {
  kappaValue.textContent = state.currentKappa.toPrecision(4);
  previewLabel.textContent = displayedLabel(state);
  banner.hidden = state.error === null;
  banner.textContent = state.error ?? "";
  spinner.hidden = state.inflightGen === null;
  acceptButton.disabled = !canAccept(state);
  acceptedLabel.textContent =
    state.acceptedKappa === null ? "" : `accepted κ = ${state.acceptedKappa}`;
  const shown = state.displayed;
  if (shown !== null) {
    shadedImg.src = `data:image/png;base64,${shown.shaded_preview}`;
    if (depthCanvas.width !== shown.width || depthCanvas.height !== shown.height) {
      depthCanvas.width = shown.width;
      depthCanvas.height = shown.height;
    }
    const ctx = depthCanvas.getContext("2d");
    if (ctx !== null) {
      const rgba = depthToRgba(
        shown.depth,
        shown.mask,
        shown.width,
        shown.height,
        shown.depth_min,
        shown.depth_max,
      );
      ctx.putImageData(new ImageData(rgba, shown.width, shown.height), 0, 0);
    }
  }
}

const flight = new SingleFlight<number>(async (kappa) => {
  const gen = ++generation;
  state = requestStarted(state, gen);
  render();
  try {
    const response = await fetchBalloon(kappa);
    state = responseArrived(state, gen, response);
  } catch (err) {
    state = responseFailed(state, gen, err instanceof Error ? err.message : String(err));
  }
  render();
});

const debouncer = new Debouncer<number>(DEBOUNCE_MS, (kappa) => {
  void flight.want(kappa);
});

slider.addEventListener("input", () => {
  state = sliderMoved(state, sliderToKappa(Number(slider.value)));
  render();
  debouncer.signal(state.currentKappa);
});

acceptButton.addEventListener("click", () => {
  if (!canAccept(state) || state.displayed === null) {
    return;
  }
  const kappa = state.displayed.kappa;
  state = acceptStarted(state);
  render();
  postAccept(kappa)
    .then((accepted) => {
      state = acceptFinished(state, accepted);
      render();
    })
    .catch((err) => {
      state = acceptFailed(state, err instanceof Error ? err.message : String(err));
      render();
    });
});

render();
debouncer.signal(state.currentKappa);
