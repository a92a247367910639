/** Keyboard-first label entry: number keys pick labels, 0/n marks not assessable. */

import type { Choice } from './types';

export function mapKeyToChoice(key: string, labels: string[]): Choice | null {
  if (key === '0' || key === 'n' || key === 'N') {
    return { notAssessable: true };
  }
  if (/^[1-9]$/.test(key)) {
    const index = Number(key) - 1;
    if (index < labels.length) {
      return { label: labels[index] };
    }
  }
  return null;
}
