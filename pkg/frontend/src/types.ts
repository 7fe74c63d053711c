// DTOs mirroring the review service JSON API.

export type Verdict = 'correct' | 'mislabel';

export interface Suspect {
  sample_id: string;
  rank: number;
  noise_reduction: number;
  p_noise: number;
  given_label: number;
  proposed_label: number;
  group_id: string;
  frame_index: number;
  thumbnail: string;
}

export interface SuspectsPage {
  total: number;
  items: Suspect[];
}

export interface Meta {
  total_suspects: number;
  num_classes: number;
  class_names: string[];
  mix_shortfall: boolean;
  incomplete: boolean;
  reviewers_required: number;
  ui_condition: string;
}

export interface Progress {
  reviewer_id: string;
  done: number;
  pending: number;
}

export interface ConsensusEntry {
  sample_id: string;
  final_verdict: Verdict;
  final_label: number | null;
  votes_mislabel: number;
  votes_correct: number;
  unresolved_label_tie: boolean;
}

export interface PrecisionResult {
  k: number;
  precision: number;
}

export interface AdjudicationBody {
  sample_id: string;
  reviewer_id: string;
  verdict: Verdict;
  revised_label?: number;
}
