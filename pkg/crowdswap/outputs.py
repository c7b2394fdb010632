"""
Atomic writers for every file the simulator emits.

Each writer goes through a temporary file in the destination directory and
replaces the target only once the content is complete, so an interrupted
sweep never leaves a half-written result behind.
"""

import csv
import json
import os
import tempfile
from contextlib import contextmanager


@contextmanager
def atomic_open(path, newline=None):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    temp_file = tempfile.NamedTemporaryFile(mode='w', delete=False, newline=newline,
                                            encoding='utf-8', dir=directory, suffix='.tmp')
    temp_file_path = temp_file.name
    try:
        with temp_file:
            yield temp_file
        os.replace(temp_file_path, path)
    except BaseException:
        if os.path.exists(temp_file_path):
            os.remove(temp_file_path)
        raise


def dumps_canonical(obj):
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, obj):
    with atomic_open(path, newline='\n') as f:
        f.write(dumps_canonical(obj))
    return path


def write_jsonl(path, records):
    with atomic_open(path, newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False))
            f.write("\n")
    return path


def write_csv(path, header, rows):
    with atomic_open(path, newline='') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_jsonl(path):
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]
