// View-state for the balloon tuning page.  All transitions are pure so the
// request/display invariants are unit-testable without a DOM: the displayed
// preview always belongs to the newest completed request, and stale
// responses are discarded.

export interface BalloonResponse {
  kappa: number;
  width: number;
  height: number;
  depth: number[];
  mask: number[];
  depth_min: number;
  depth_max: number;
  shaded_preview: string;
}

export interface TunerViewState {
  currentKappa: number;
  displayed: BalloonResponse | null;
  inflightGen: number | null;
  error: string | null;
  acceptedKappa: number | null;
  accepting: boolean;
}

export function initialState(kappa: number): TunerViewState {
  return {
    currentKappa: kappa,
    displayed: null,
    inflightGen: null,
    error: null,
    acceptedKappa: null,
    accepting: false,
  };
}

export function sliderMoved(state: TunerViewState, kappa: number): TunerViewState {
  return { ...state, currentKappa: kappa };
}

export function requestStarted(state: TunerViewState, gen: number): TunerViewState {
  return { ...state, inflightGen: gen };
}

/** Apply a completed response; responses from superseded requests are dropped. */
export function responseArrived(
  state: TunerViewState,
  gen: number,
  response: BalloonResponse,
): TunerViewState {
  if (state.inflightGen !== gen) {
    return state;
  }
  return { ...state, displayed: response, inflightGen: null, error: null };
}

/** Network/server failure: show a banner but keep the last good preview. */
export function responseFailed(
  state: TunerViewState,
  gen: number,
  message: string,
): TunerViewState {
  if (state.inflightGen !== gen) {
    return state;
  }
  return { ...state, inflightGen: null, error: message };
}

export function canAccept(state: TunerViewState): boolean {
  return state.displayed !== null && !state.accepting;
}

export function acceptStarted(state: TunerViewState): TunerViewState {
  return { ...state, accepting: true };
}

export function acceptFinished(state: TunerViewState, kappa: number): TunerViewState {
  return { ...state, accepting: false, acceptedKappa: kappa };
}

export function acceptFailed(state: TunerViewState, message: string): TunerViewState {
  return { ...state, accepting: false, error: message };
}

/** Kappa a freshly displayed preview should be labeled with. */
export function displayedLabel(state: TunerViewState): string {
  return state.displayed === null ? "-" : state.displayed.kappa.toPrecision(4);
}
