import json
import os
import shutil
import tempfile
import unittest

from crowdswap.errors import ConfigError
from crowdswap.scenario import PRESETS, Scenario, ScenarioKind, apply_preset
from settings_manager import SettingsManager


class SettingsTestBase(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _write(self, text, filename="scenario.json"):
        path = os.path.join(self.test_dir, filename)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        return path

    def _write_json(self, data, filename="scenario.json"):
        return self._write(json.dumps(data, indent=2), filename)


# ============================================================================
# DEFAULTS
# ============================================================================

class TestDefaults(SettingsTestBase):

    def test_defaults_match_scenario_defaults(self):
        """The bundled defaults describe the same scenario as Scenario()."""
        sm = SettingsManager()
        self.assertEqual(sm.to_scenario().to_dict(), Scenario().to_dict())

    def test_output_defaults(self):
        output = SettingsManager().get_output()
        self.assertEqual(output["dir"], "out")
        self.assertTrue(output["events"])

    def test_empty_user_file_keeps_defaults(self):
        """An empty user file changes nothing."""
        sm = SettingsManager(self._write_json({}))
        self.assertEqual(sm.to_scenario().tasks.total, 600)


# ============================================================================
# MERGING USER FILES
# ============================================================================

class TestMerge(SettingsTestBase):

    def test_partial_override(self):
        """User values replace only the keys they name."""
        path = self._write_json({"scenario": {"seed": 4, "tasks": {"reward": 7.5}}})
        scenario = SettingsManager(path).to_scenario()
        self.assertEqual(scenario.seed, 4)
        self.assertEqual(scenario.tasks.reward, 7.5)
        self.assertEqual(scenario.tasks.penalty, 5.0)

    def test_mode_mix_is_replaced_whole(self):
        """The mode mix is a value, not a section to merge into."""
        path = self._write_json({"scenario": {"workers": {"mode_mix": {"walk": 1.0}}}})
        scenario = SettingsManager(path).to_scenario()
        self.assertEqual(scenario.workers.mode_mix, {"walk": 1.0})

    def test_defaults_are_not_mutated(self):
        """Merging user values leaves the bundled defaults as they were."""
        path = self._write_json({"scenario": {"tasks": {"total": 10}}})
        sm = SettingsManager(path)
        self.assertEqual(sm.defaults["scenario"]["tasks"]["total"], 600)

    def test_seed_override(self):
        """An explicit seed wins over the file."""
        path = self._write_json({"scenario": {"seed": 4}})
        self.assertEqual(SettingsManager(path).to_scenario(seed=7).seed, 7)

    def test_output_section(self):
        path = self._write_json({"output": {"dir": "results", "charts": False}})
        output = SettingsManager(path).get_output()
        self.assertEqual(output["dir"], "results")
        self.assertFalse(output["charts"])


# ============================================================================
# ERRORS
# ============================================================================

class TestErrors(SettingsTestBase):

    def test_unknown_key_reports_field_and_line(self):
        """A misspelt key is reported with its dotted path."""
        path = self._write('{\n  "scenario": {\n    "taskz": {"total": 5}\n  }\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            SettingsManager(path)
        self.assertEqual(ctx.exception.field, "scenario.taskz")
        self.assertEqual(ctx.exception.line, 3)

    def test_negative_reward_names_the_field(self):
        """Range errors name the offending field."""
        path = self._write('{\n  "scenario": {\n    "tasks": {\n      "reward": -1\n    }\n  }\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            SettingsManager(path).to_scenario()
        self.assertEqual(ctx.exception.field, "scenario.tasks.reward")
        self.assertEqual(ctx.exception.line, 4)
        self.assertIn("scenario.tasks.reward", str(ctx.exception))

    def test_invalid_json_reports_line(self):
        """JSON syntax errors carry the line number."""
        path = self._write('{\n  "scenario": {\n    "seed": ,\n  }\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            SettingsManager(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_unsupported_schema_version(self):
        path = self._write_json({"schema_version": 2})
        with self.assertRaises(ConfigError) as ctx:
            SettingsManager(path)
        self.assertEqual(ctx.exception.field, "schema_version")

    def test_section_must_be_object(self):
        path = self._write_json({"scenario": {"tasks": 5}})
        with self.assertRaises(ConfigError):
            SettingsManager(path)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            SettingsManager(os.path.join(self.test_dir, "nope.json"))

    def test_bad_transition_matrix(self):
        """A transition row that does not sum to 1 is a config error."""
        path = self._write_json({"scenario": {"traffic": {"transition": [[1, 0, 0], [0, 1, 0], [0, 0, 0.5]]}}})
        with self.assertRaises(ConfigError) as ctx:
            SettingsManager(path).to_scenario()
        self.assertEqual(ctx.exception.field, "scenario.traffic.transition")

    def test_unknown_strategy(self):
        path = self._write_json({"scenario": {"strategy": {"name": "greedy"}}})
        with self.assertRaises(ConfigError) as ctx:
            SettingsManager(path).to_scenario()
        self.assertEqual(ctx.exception.field, "scenario.strategy.name")


# ============================================================================
# PRESETS
# ============================================================================

class TestPresets(SettingsTestBase):

    def test_sensing_presets(self):
        """sensing-1 is a crowdsensing scenario with 5% incidents."""
        sm = SettingsManager()
        s1 = sm.to_scenario(preset="sensing-1")
        self.assertIs(s1.kind, ScenarioKind.CROWDSENSING)
        self.assertEqual(s1.incidents.probability, 0.05)
        s2 = sm.to_scenario(preset="sensing-2")
        self.assertEqual((s2.tasks.rate_per_hour, s2.tasks.total), (100.0, 1200))
        self.assertEqual(sm.to_scenario(preset="sensing-3").incidents.probability, 0.10)

    def test_crowdshipping_preset_is_single_task(self):
        """Only the crowdshipping preset limits workers to one task."""
        scenario = SettingsManager().to_scenario(preset="crowdshipping")
        self.assertTrue(scenario.single_task)
        self.assertFalse(apply_preset(scenario, "sensing-1").single_task)

    def test_preset_keeps_user_overrides(self):
        """A preset does not undo values from the user file."""
        path = self._write_json({"scenario": {"tasks": {"reward": 9.0}}})
        self.assertEqual(SettingsManager(path).to_scenario(preset="sensing-1").tasks.reward, 9.0)

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            SettingsManager().to_scenario(preset="sensing-9")

    def test_every_preset_validates(self):
        """Every bundled preset produces a valid scenario."""
        for name in PRESETS:
            with self.subTest(preset=name):
                SettingsManager().to_scenario(preset=name)


if __name__ == '__main__':
    unittest.main()
