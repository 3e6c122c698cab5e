/**
 * Annotator-facing prompt strings. These are fixed study wording and must
 * not be paraphrased; the snapshot test pins them character for character.
 */

export const Q1_PROMPT =
  'Does the focus area contains necessary details enable you to classify a gender?';

export const Q2_PROMPT =
  'Does the focus area contains unnecessary details not related for you to classify a gender?';

export const YES_LABEL = 'Yes';
export const NO_LABEL = 'No';

/** Five-point perceived-quality scale, index 0 = rating 1. */
export const LIKERT_LABELS: readonly string[] = [
  'Very Poor',
  'Poor',
  'Fair',
  'Good',
  'Excellent',
];

export const QUADRANT_LABELS: Readonly<Record<string, string>> = {
  RA: 'Reasonable Accurate',
  UA: 'Unreasonable Accurate',
  RIA: 'Reasonable Inaccurate',
  UIA: 'Unreasonable Inaccurate',
};
