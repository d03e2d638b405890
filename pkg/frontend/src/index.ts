export {
  AdapterError,
  FacekitClient,
  type AssignResult,
  type EvalImage,
  type EvalOptions,
  type EvalResult,
  type FlatBatch,
  type MatchConfig,
} from "./client";
export * from "./buffers";
