import PyInstaller.__main__
import os
import shutil


def build():
    # clean dist and build folders
    if os.path.exists("dist"):
        shutil.rmtree("dist")
    if os.path.exists("build"):
        shutil.rmtree("build")

    # settings_manager looks for default_scenario.json next to the bundle (sys._MEIPASS)
    datas = [("default_scenario.json", ".")]
    if os.path.exists(".env"):
        datas.append((".env", "."))

    PyInstaller.__main__.run([
        "crowdswap_cli.py",
        "--name=crowdswap",
        "--console",
        "--onedir",
        "--clean",
        # the sweep pool imports these by name in child processes
        "--hidden-import=crowdswap.sweep",
        "--collect-submodules=river",
    ] + [f"--add-data={src}{os.pathsep}{dest}" for src, dest in datas])

    print("Build complete. detailed logs in build/ and output in dist/crowdswap/")


if __name__ == "__main__":
    build()
