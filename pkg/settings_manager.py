import copy
import json
import os
import re
import sys

from crowdswap.errors import ConfigError
from crowdswap.scenario import Scenario, apply_preset

SCHEMA_VERSION = 1
TOP_LEVEL_KEYS = ("schema_version", "scenario", "output")


class SettingsManager:
    """
    Loads a scenario config file merged over `default_scenario.json`.

    The user file only needs the keys it changes; every key it names must
    exist in the defaults. Errors raise ConfigError with the dotted field and,
    when it can be found, the line in the user file.
    """

    def __init__(self, config_file=None, default_settings_file="default_scenario.json"):
        # Resolve paths correctly for running from source vs compiled executable (PyInstaller)
        if getattr(sys, 'frozen', False):
            bundle_dir = getattr(sys, '_MEIPASS', os.path.dirname(os.path.abspath(__file__)))
        else:
            bundle_dir = os.path.dirname(os.path.abspath(__file__))

        self.config_file = config_file
        self.default_settings_file = os.path.join(bundle_dir, default_settings_file)
        self.defaults = {}
        self.settings = {}
        self._text = ""
        self.load()

    def load(self):
        self.defaults = self._read_json(self.default_settings_file, keep_text=False)
        self.settings = copy.deepcopy(self.defaults)
        if self.config_file:
            if not os.path.exists(self.config_file):
                raise ConfigError("config", f"file '{self.config_file}' does not exist")
            user = self._read_json(self.config_file, keep_text=True)
            if not isinstance(user, dict):
                raise ConfigError("config", "top level must be an object", line=1)
            self._check_version(user)
            self._merge(self.settings, user, "")
        return self.settings

    def _read_json(self, path, keep_text):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError("config", f"cannot read '{path}': {e}") from None
        if keep_text:
            self._text = text
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON: {e.msg}", line=e.lineno) from None

    def _check_version(self, user):
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}",
                              line=self.line_of("schema_version"))

    def _merge(self, base, override, prefix):
        for key, value in override.items():
            path = f"{prefix}.{key}" if prefix else key
            if key not in base:
                raise ConfigError(path, "unknown key", line=self.line_of(key))
            if isinstance(base[key], dict) and key != "mode_mix" and key != "cost_per_meter":
                if not isinstance(value, dict):
                    raise ConfigError(path, "must be an object", line=self.line_of(key))
                self._merge(base[key], value, path)
            else:
                base[key] = value

    def line_of(self, field_path):
        """First line of the user file that mentions the last component of `field_path` as a key."""
        if not self._text or not field_path:
            return None
        key = field_path.rsplit(".", 1)[-1]
        pattern = re.compile(r'"%s"\s*:' % re.escape(key))
        for number, line in enumerate(self._text.splitlines(), start=1):
            if pattern.search(line):
                return number
        return None

    def get_settings(self):
        return self.settings

    def get_output(self):
        return dict(self.settings.get("output", {}))

    def to_scenario(self, preset=None, seed=None):
        """Typed, validated Scenario, optionally with a preset and seed applied."""
        try:
            scenario = Scenario.from_dict(self.settings["scenario"])
            if preset:
                scenario = apply_preset(scenario, preset)
            if seed is not None:
                scenario = scenario.replace(seed=int(seed))
            scenario.validate()
        except ConfigError as e:
            if e.line is None:
                e = ConfigError(e.field, e.message, line=self.line_of(e.field))
            raise e from None
        return scenario
