/** Wire types mirroring the chat service's JSON API. */

export interface GenderFlags {
  female: boolean;
  male: boolean;
}

export interface SafetyVerdict {
  blocklist_hits: string[];
  classifier_score: number;
  offensive_by_blocklist: boolean;
  offensive_by_classifier: boolean;
  gender_flags: GenderFlags;
}

export interface ReplyStats {
  beam_score: number;
  tokens: number;
  blocked_step_fallbacks: number;
}

export interface Reply {
  text: string;
  safety: SafetyVerdict;
  stats: ReplyStats;
}

export interface SessionResponse {
  session_id: string;
  opening: Reply | null;
}

export interface ImagesResponse {
  images: string[];
}

export interface ApiError {
  code: string;
  message: string;
}

/** One transcript entry; model entries carry the full reply payload. */
export type Message =
  | { speaker: "human"; text: string }
  | { speaker: "model"; reply: Reply };
